"""Canonical symplectic structure on R^{2n}, Hamiltonian fields and Lie calculus.

Conventions (coordinates ordered as p_1..p_n, q_1..q_n):

* ``Omega = sum_l dp_l ^ dq_l``, i.e. ``Omega(U, V) = U^T W V`` with
  ``W = [[0, I], [-I, 0]]``.
* ``X_F`` is defined by ``Omega(X_F, .) = dF``, giving
  ``X_F = (dF/dq) d/dp - (dF/dp) d/dq``.
* ``{F, G} := dG(X_F) = X_F(G)``, so that ``{q, p} = +1``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .exprdsl import Expression, evaluate, parse

__all__ = [
    "SymplecticChart",
    "VectorField",
    "as_field",
    "hamiltonian_field",
    "poisson_bracket",
    "bracket_matrix",
    "lie_bracket",
    "lie_derivative_oneform",
    "coordinate_field",
]


def _canonical_matrix(n: int) -> np.ndarray:
    W = np.zeros((2 * n, 2 * n))
    W[:n, n:] = np.eye(n)
    W[n:, :n] = -np.eye(n)
    return W


@dataclass(frozen=True)
class SymplecticChart:
    """A global Darboux chart on R^{2n}: momenta first, then positions."""

    n: int
    names: tuple = ()

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("n must be positive")
        if not self.names:
            names = tuple(f"p{i + 1}" for i in range(self.n)) + tuple(f"q{i + 1}" for i in range(self.n))
            object.__setattr__(self, "names", names)
        if len(self.names) != 2 * self.n:
            raise ValueError(f"expected {2 * self.n} coordinate names, got {len(self.names)}")

    @property
    def dim(self) -> int:
        return 2 * self.n

    @property
    def omega(self) -> np.ndarray:
        return _canonical_matrix(self.n)

    def flat(self, v) -> np.ndarray:
        """Omega-flat: vector ``V`` to the covector ``Omega(V, .)``."""
        return self.omega.T @ np.asarray(v, dtype=float)

    def sharp(self, alpha) -> np.ndarray:
        """Inverse of :meth:`flat`."""
        return self.omega @ np.asarray(alpha, dtype=float)

    def form(self, u, v) -> float:
        return float(np.asarray(u) @ self.omega @ np.asarray(v))

    def parse(self, source: str) -> Expression:
        return parse(source, self.names)


# jet(points, order) -> (value, jacobian); jacobian[k, l] = d_l V^k, None if order == 0
FieldJet = Callable[[np.ndarray, int], tuple]


@dataclass(frozen=True)
class VectorField:
    """Vector (or covector) field on R^d given by value and Jacobian jets.

    ``jet`` accepts points of shape ``(d,)`` or ``(d, N)``.
    """

    dim: int
    jet: FieldJet
    name: str = ""

    def __call__(self, z) -> np.ndarray:
        return self.jet(np.asarray(z, dtype=float), 0)[0]

    def jacobian(self, z) -> np.ndarray:
        return self.jet(np.asarray(z, dtype=float), 1)[1]

    def value_and_jacobian(self, z):
        return self.jet(np.asarray(z, dtype=float), 1)

    @classmethod
    def from_exprs(cls, components: Sequence[Expression], name: str = "") -> "VectorField":
        components = list(components)
        d = len(components)
        if any(c.dim != d for c in components):
            raise ValueError("component count must equal the coordinate count")

        def jet(z, order):
            vals, grads = [], []
            for c in components:
                v, g, _ = evaluate(c, z, order=1 if order else 0)
                vals.append(v)
                grads.append(g)
            value = np.stack(vals)
            return value, (np.stack(grads) if order else None)

        return cls(d, jet, name or "(" + ", ".join(str(c) for c in components) + ")")

    @classmethod
    def parse(cls, sources: Sequence[str], coords: Sequence[str], name: str = "") -> "VectorField":
        return cls.from_exprs([parse(s, coords) for s in sources], name)

    @classmethod
    def combination(cls, coeffs: Sequence[Expression], fields: Sequence["VectorField"], name: str = "") -> "VectorField":
        """The field ``sum_j c_j X_j`` with function coefficients ``c_j``."""
        coeffs, fields = list(coeffs), list(fields)
        if len(coeffs) != len(fields):
            raise ValueError("one coefficient per field")
        d = fields[0].dim

        def jet(z, order):
            value = 0.0
            jac = 0.0
            for c, X in zip(coeffs, fields):
                cv, cg, _ = evaluate(c, z, order=1 if order else 0)
                xv, xj = X.jet(z, order)
                value = value + cv * xv
                if order:
                    jac = jac + cv * xj + xv[:, None] * cg[None, :]
            return value, (jac if order else None)

        return cls(d, jet, name)

    def __add__(self, other: "VectorField") -> "VectorField":
        def jet(z, order):
            a, ja = self.jet(z, order)
            b, jb = other.jet(z, order)
            return a + b, (ja + jb if order else None)

        return VectorField(self.dim, jet, f"{self.name} + {other.name}")

    def scaled(self, c: float) -> "VectorField":
        def jet(z, order):
            a, ja = self.jet(z, order)
            return c * a, (c * ja if order else None)

        return VectorField(self.dim, jet, f"{c}*{self.name}")


def as_field(obj, coords: Sequence[str] | None = None) -> VectorField:
    """Accept a VectorField, a list of Expressions or (with ``coords``) a list of strings."""
    if isinstance(obj, VectorField):
        return obj
    items = list(obj)
    if items and isinstance(items[0], str):
        if coords is None:
            raise ValueError("coordinate names needed to parse string components")
        return VectorField.parse(items, coords)
    return VectorField.from_exprs(items)


def coordinate_field(dim: int, k: int) -> VectorField:
    """The constant field d/dx_k."""
    e = np.zeros(dim)
    e[k] = 1.0

    def jet(z, order):
        batch = z.shape[1:]
        value = np.broadcast_to(e.reshape((dim,) + (1,) * len(batch)), (dim,) + batch).copy()
        return value, (np.zeros((dim, dim) + batch) if order else None)

    return VectorField(dim, jet, f"d{k}")


def hamiltonian_field(F: Expression, chart: SymplecticChart | None = None) -> VectorField:
    """``X_F`` with ``Omega(X_F, .) = dF``."""
    d = F.dim
    if chart is None:
        chart = SymplecticChart(d // 2, F.coords) if d % 2 == 0 else None
    if chart is None or chart.dim != d:
        raise ValueError("expression dimension does not match an even-dimensional chart")
    n = d // 2

    def jet(z, order):
        _, g, H = evaluate(F, z, order=2 if order else 1)
        # W @ g for W = [[0, I], [-I, 0]]
        value = np.concatenate([g[n:], -g[:n]])
        if not order:
            return value, None
        return value, np.concatenate([H[n:], -H[:n]])

    return VectorField(d, jet, f"X[{F}]")


def poisson_bracket(F: Expression, G: Expression, point) -> float:
    """``{F, G}(point) = dG(X_F)``; ``{q, p} = 1``."""
    n = F.dim // 2
    _, gF, _ = evaluate(F, point, order=1)
    _, gG, _ = evaluate(G, point, order=1)
    return float(gG @ _canonical_matrix(n) @ gF)


def bracket_matrix(functions: Sequence[Expression], point) -> np.ndarray:
    """Antisymmetric matrix of ``{F_i, F_j}`` at ``point``, and the Jacobian of F."""
    functions = list(functions)
    n = functions[0].dim // 2
    grads = np.array([evaluate(f, point, order=1)[1] for f in functions])
    B = grads @ _canonical_matrix(n).T @ grads.T
    # B[i, j] = grad_i^T W^T grad_j = grad_j^T W grad_i = {F_i, F_j}
    return 0.5 * (B - B.T)


def lie_bracket(X: VectorField, Y: VectorField, point) -> np.ndarray:
    """``[X, Y]^k = X(Y^k) - Y(X^k)``."""
    x, JX = X.value_and_jacobian(point)
    y, JY = Y.value_and_jacobian(point)
    return JY @ x - JX @ y


def lie_derivative_oneform(X: VectorField, alpha, point) -> np.ndarray:
    """Components of ``L_X alpha`` at ``point``.

    ``alpha`` is a covector field (a :class:`VectorField` whose components are
    read as covector components) or a list of component expressions.
    """
    alpha = as_field(alpha)
    x, JX = X.value_and_jacobian(point)
    a, Ja = alpha.value_and_jacobian(point)
    return Ja @ x + JX.T @ a
