"""The flat connection of a parallelization, its torsion and geodesics,
parallel transport, the symplectic connection on isotropic fibers and the
chart inverse to a commuting flow action.

For a frame ``X_1..X_m`` (columns of ``M``) every field in its span is
``Y = b^j X_j`` and ``nabla_X Y = X(b^j) X_j``.  Differentiating ``M b = Y``
gives ``X(b) = M^+ (J_Y x - sum_j b^j J_{X_j} x)``, which is what
:func:`coefficient_derivative` evaluates.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exprdsl import Expression, evaluate
from .flows import FlowAction, IntegrationError, commutation_residual, trajectory
from .symplectic import VectorField, hamiltonian_field, lie_bracket, lie_derivative_oneform

__all__ = [
    "SPAN_TOL",
    "SpanViolationError",
    "TangencyError",
    "IsotropyError",
    "NonCommutingFrameError",
    "NonConvergenceError",
    "ConnectionFrame",
    "frame_coefficients",
    "coefficient_derivative",
    "nabla",
    "torsion",
    "curvature",
    "geodesic_residual",
    "EquivalenceVerdict",
    "equivalence_check",
    "TransportResult",
    "parallel_transport",
    "omega_connection",
    "cartan_hadamard_chart",
]

SPAN_TOL = 1e-8
FD_STEP = 1e-6
CURVATURE_STEP = 1e-3


class SpanViolationError(ValueError):
    def __init__(self, residual: float, point):
        self.residual = residual
        self.point = np.asarray(point, dtype=float)
        super().__init__(f"field leaves the frame span: residual {residual:.3g} at {self.point.tolist()}")


class TangencyError(ValueError):
    pass


class IsotropyError(ValueError):
    pass


class NonCommutingFrameError(ValueError):
    pass


class NonConvergenceError(RuntimeError):
    def __init__(self, target, residual: float):
        self.target = np.asarray(target, dtype=float)
        self.residual = residual
        super().__init__(f"Newton did not converge for target {self.target.tolist()}: residual {residual:.3g}")


@dataclass
class ConnectionFrame:
    """A parallelization ``X_1..X_m`` of a region of R^d, optionally with an
    axis-aligned domain box ``[(lo, hi), ...]``."""

    fields: list
    box: list | None = None
    span_tol: float = SPAN_TOL

    def __post_init__(self):
        self.fields = list(self.fields)
        if not self.fields:
            raise ValueError("empty frame")
        if any(X.dim != self.dim for X in self.fields):
            raise ValueError("frame fields live on different spaces")
        if self.m > self.dim:
            raise ValueError("more frame fields than dimensions")

    @property
    def dim(self) -> int:
        return self.fields[0].dim

    @property
    def m(self) -> int:
        return len(self.fields)

    def matrix(self, point) -> np.ndarray:
        """Frame vectors at ``point`` as columns (d, m)."""
        return np.column_stack([X(point) for X in self.fields])

    def jets(self, point):
        vals, jacs = zip(*(X.value_and_jacobian(np.asarray(point, dtype=float)) for X in self.fields))
        return np.column_stack(vals), list(jacs)

    def sample(self, count: int, rng: np.random.Generator) -> np.ndarray:
        if self.box is None:
            raise ValueError("frame has no domain box")
        lo, hi = np.array(self.box, dtype=float).T
        return lo + (hi - lo) * rng.random((count, len(lo)))

    def independent_at(self, point, tol: float = 1e-10) -> bool:
        sv = np.linalg.svd(self.matrix(point), compute_uv=False)
        return bool(sv[-1] > tol * max(sv[0], 1.0))

    def member(self, i: int) -> VectorField:
        return self.fields[i]


def _solve(M: np.ndarray, y: np.ndarray, point, tol: float) -> np.ndarray:
    b, *_ = np.linalg.lstsq(M, y, rcond=None)
    res = float(np.linalg.norm(M @ b - y))
    if res > tol * max(1.0, float(np.linalg.norm(y))):
        raise SpanViolationError(res, point)
    return b


def frame_coefficients(frame: ConnectionFrame, Y, point) -> np.ndarray:
    """The ``b^j`` with ``Y = b^j X_j`` at ``point``; ``Y`` is a field or a vector."""
    point = np.asarray(point, dtype=float)
    y = Y(point) if isinstance(Y, VectorField) else np.asarray(Y, dtype=float)
    return _solve(frame.matrix(point), y, point, frame.span_tol)


def _as_vector(X, point) -> np.ndarray:
    return X(point) if isinstance(X, VectorField) else np.asarray(X, dtype=float)


def coefficient_derivative(frame: ConnectionFrame, X, Y: VectorField, point, method: str = "jet",
                           step: float = FD_STEP) -> np.ndarray:
    """``X(b^j)`` for the coefficients of ``Y`` in the frame.

    ``method="jet"`` differentiates the linear solve exactly; ``"fd"`` takes
    central differences of the solve along ``x`` with the given step.
    """
    point = np.asarray(point, dtype=float)
    x = _as_vector(X, point)
    if method == "fd":
        nx = float(np.linalg.norm(x))
        if nx == 0.0:
            return np.zeros(frame.m)
        h = step / nx
        bp = frame_coefficients(frame, Y, point + h * x)
        bm = frame_coefficients(frame, Y, point - h * x)
        return (bp - bm) / (2 * h)
    if method != "jet":
        raise ValueError(f"unknown method {method!r}")
    M, jacs = frame.jets(point)
    y, JY = Y.value_and_jacobian(point)
    b = _solve(M, y, point, frame.span_tol)
    rhs = JY @ x - sum(bj * (Jj @ x) for bj, Jj in zip(b, jacs))
    return np.linalg.lstsq(M, rhs, rcond=None)[0]


def nabla(frame: ConnectionFrame, X, Y: VectorField, point, method: str = "jet") -> np.ndarray:
    """``nabla_X Y = X(b^j) X_j`` at ``point``."""
    point = np.asarray(point, dtype=float)
    return frame.matrix(point) @ coefficient_derivative(frame, X, Y, point, method)


def torsion(frame: ConnectionFrame, i: int, j: int, point, check_tol: float = 1e-8) -> np.ndarray:
    """``T(X_i, X_j) = nabla_{X_i} X_j - nabla_{X_j} X_i - [X_i, X_j]``.

    The result is cross-checked against ``-[X_i, X_j]``.
    """
    for k in (i, j):
        if not 0 <= k < frame.m:
            raise IndexError(f"frame index {k} out of range")
    point = np.asarray(point, dtype=float)
    Xi, Xj = frame.fields[i], frame.fields[j]
    br = lie_bracket(Xi, Xj, point)
    T = nabla(frame, Xi, Xj, point) - nabla(frame, Xj, Xi, point) - br
    gap = float(np.max(np.abs(T + br)))
    if gap > check_tol * max(1.0, float(np.max(np.abs(br)))):
        raise ArithmeticError(f"torsion disagrees with -[X_i, X_j] by {gap:.3g}")
    return T


def curvature(frame: ConnectionFrame, X: VectorField, Y: VectorField, Z: VectorField, point,
              step: float = CURVATURE_STEP) -> np.ndarray:
    """``R(X, Y) Z = nabla_X nabla_Y Z - nabla_Y nabla_X Z - nabla_[X,Y] Z``.

    The inner covariant derivatives are exact; the outer derivative of their
    frame coefficients is a fourth-order five-point difference along the
    outer field.
    """
    point = np.asarray(point, dtype=float)

    def outer(A: VectorField, B: VectorField) -> np.ndarray:
        a = A(point)
        na = float(np.linalg.norm(a))
        if na == 0.0:
            return np.zeros(frame.m)
        h = step / na
        c = {k: coefficient_derivative(frame, B, Z, point + k * h * a) for k in (-2, -1, 1, 2)}
        return (8.0 * (c[1] - c[-1]) - (c[2] - c[-2])) / (12.0 * h)

    br = lie_bracket(X, Y, point)
    coeffs = outer(X, Y) - outer(Y, X) - coefficient_derivative(frame, br, Z, point)
    return frame.matrix(point) @ coeffs


def geodesic_residual(frame: ConnectionFrame, which, start, t: float, tol: float = 1e-10) -> float:
    """Max of ``|nabla_V V|`` over the accepted integrator steps of the curve
    of ``V`` from ``start``; ``which`` is a frame index or a field."""
    V = frame.fields[which] if isinstance(which, (int, np.integer)) else which
    if t == 0:
        return 0.0
    states = trajectory(V, start, t, tol).states
    return max(float(np.linalg.norm(nabla(frame, V, V, z))) for z in states)


@dataclass
class EquivalenceVerdict:
    same: bool
    G: np.ndarray | None
    spread: float
    reason: str = ""

    @property
    def label(self) -> str:
        return "same-connection" if self.same else "different"

    def __str__(self) -> str:
        return self.label


def equivalence_check(frame_a: ConnectionFrame, frame_b: ConnectionFrame, samples, tol: float = 1e-8) -> EquivalenceVerdict:
    """Whether ``B_j = G^i_j A_i`` with one constant invertible matrix ``G``."""
    if frame_a.m != frame_b.m:
        return EquivalenceVerdict(False, None, math.inf, "frames have different sizes")
    Gs = []
    for z in np.atleast_2d(np.asarray(samples, dtype=float)):
        A, B = frame_a.matrix(z), frame_b.matrix(z)
        G, *_ = np.linalg.lstsq(A, B, rcond=None)
        res = float(np.max(np.abs(A @ G - B)))
        if res > tol * max(1.0, float(np.max(np.abs(B)))):
            return EquivalenceVerdict(False, None, math.inf, "frames span different subspaces")
        Gs.append(G)
    Gs = np.array(Gs)
    G = Gs.mean(axis=0)
    spread = float(np.max(np.abs(Gs - Gs[0])))
    if spread > tol * max(1.0, float(np.max(np.abs(G)))):
        return EquivalenceVerdict(False, G, spread, "G varies across samples")
    sv = np.linalg.svd(G, compute_uv=False)
    if sv[-1] <= 1e-12 * max(sv[0], 1.0):
        return EquivalenceVerdict(False, G, spread, "G is singular")
    return EquivalenceVerdict(True, G, spread)


@dataclass
class TransportResult:
    vector: np.ndarray  # constant-coefficient transport
    integrated: np.ndarray  # transport equation integrated along the path
    coefficients: np.ndarray
    discrepancy: float = field(init=False)

    def __post_init__(self):
        self.discrepancy = float(np.max(np.abs(self.vector - self.integrated)))


def parallel_transport(frame: ConnectionFrame, path, v0, ds: float = 0.01) -> TransportResult:
    """Transport ``v0`` along the piecewise linear ``path`` (rows).

    A parallel field keeps its frame coefficients, so the result is
    ``b^j X_j(end)``.  As a cross-check the transport equation
    ``dV/ds = sum_j (M^+ V)_j J_{X_j} gamma'`` is integrated with classical
    RK4 at about ``ds`` arc length per step.
    """
    path = np.atleast_2d(np.asarray(path, dtype=float))
    v0 = np.asarray(v0, dtype=float)
    b = frame_coefficients(frame, v0, path[0])

    def rhs(z, dz, V):
        M, jacs = frame.jets(z)
        c = np.linalg.lstsq(M, V, rcond=None)[0]
        return sum(cj * (Jj @ dz) for cj, Jj in zip(c, jacs))

    V = v0.copy()
    for a, e in zip(path[:-1], path[1:]):
        dz = e - a
        steps = max(1, int(math.ceil(np.linalg.norm(dz) / ds)))
        h = 1.0 / steps
        for k in range(steps):
            z = a + k * h * dz
            k1 = rhs(z, dz, V)
            k2 = rhs(z + 0.5 * h * dz, dz, V + 0.5 * h * k1)
            k3 = rhs(z + 0.5 * h * dz, dz, V + 0.5 * h * k2)
            k4 = rhs(z + h * dz, dz, V + h * k3)
            V = V + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
    return TransportResult(frame.matrix(path[-1]) @ b, V, b)


def omega_connection(functions: Sequence[Expression], X: VectorField, Y: VectorField, point,
                     frame: Sequence[Expression] | None = None, tol: float = 1e-8) -> np.ndarray:
    """``nabla^Omega_X Y = Omega-sharp L_X Omega-flat(Y)`` for ``X, Y`` tangent
    to an isotropic fiber of ``functions``.

    ``frame`` optionally names the functions whose Hamiltonian fields span the
    fiber; their pairwise brackets are checked as part of the isotropy test.
    """
    point = np.asarray(point, dtype=float)
    d = X.dim
    n = d // 2
    W = np.zeros((d, d))
    W[:n, n:] = np.eye(n)
    W[n:, :n] = -np.eye(n)
    x, y = X(point), Y(point)
    for f in functions:
        g = evaluate(f, point, order=1)[1]
        worst = max(abs(float(g @ x)), abs(float(g @ y)))
        if worst > tol:
            raise TangencyError(f"field not tangent to the fiber: |dF(.)| = {worst:.3g}")
    iso = abs(float(x @ W @ y))
    if frame is not None:
        grads = np.array([evaluate(g, point, order=1)[1] for g in frame])
        iso = max(iso, float(np.max(np.abs(grads @ W @ grads.T))))
    if iso > tol:
        raise IsotropyError(f"fiber is not isotropic: Omega residual {iso:.3g}")

    def alpha_jet(z, order):
        v, J = Y.jet(z, order)
        flat = np.tensordot(W.T, v, axes=1)
        return flat, (np.tensordot(W.T, J, axes=1) if order else None)

    alpha = VectorField(d, alpha_jet, "flat")
    return W @ lie_derivative_oneform(X, alpha, point)


def hamiltonian_frame(functions: Sequence[Expression], box=None) -> ConnectionFrame:
    return ConnectionFrame([hamiltonian_field(f) for f in functions], box)


__all__.append("hamiltonian_frame")


def cartan_hadamard_chart(frame: ConnectionFrame, base, targets, tol: float = 1e-10, lattice=None,
                          commute_tol: float = 1e-8, max_iter: int = 50, flow_tol: float = 1e-12) -> np.ndarray:
    """Flow times ``t`` with ``Phi(t) = target`` for a commuting frame (rows per target).

    Newton on ``t``: the differential of ``Phi`` maps ``e_i`` to the frame
    field ``X_i`` at the image, and flows compose additively, so each
    correction only integrates the increment.
    """
    base = np.asarray(base, dtype=float)
    targets = np.atleast_2d(np.asarray(targets, dtype=float))
    if lattice is not None and lattice.h > 0:
        raise ValueError(f"action has {lattice.h} periodic directions; the chart is not global")
    probes = [base] + list(targets[:3])
    for i in range(frame.m):
        for j in range(i + 1, frame.m):
            for z in probes:
                br = float(np.max(np.abs(lie_bracket(frame.fields[i], frame.fields[j], z))))
                res = br if br > commute_tol else commutation_residual(frame.fields[i], frame.fields[j], z, 0.5, 0.5)
                if res > commute_tol:
                    raise NonCommutingFrameError(f"fields {i} and {j} do not commute (residual {res:.3g})")
    action = FlowAction(frame.fields, base, flow_tol, horizon=math.inf)
    out = []
    for target in targets:
        t, w = np.zeros(frame.m), base
        res = float(np.linalg.norm(w - target))
        for _ in range(max_iter):
            if res <= tol:
                break
            dt = np.linalg.lstsq(action.frame(w), target - w, rcond=None)[0]
            t = t + dt
            try:
                w = action(dt, start=w)
            except IntegrationError as exc:
                raise NonConvergenceError(target, res) from exc
            res = float(np.linalg.norm(w - target))
        if res > tol:
            raise NonConvergenceError(target, res)
        out.append(t)
    return np.array(out)
