"""Hypothesis checks for complete, partial and noncommutative integrability,
the coinduced Poisson structure on the image of F, Casimirs and the
Hamiltonian fields of pulled-back Casimirs."""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .exprdsl import Expression, Neg, compose, evaluate, parse
from .symplectic import SymplecticChart, VectorField, bracket_matrix, hamiltonian_field

__all__ = [
    "RANK_TOL",
    "Verdict",
    "BracketReport",
    "RankDropWarning",
    "PairingWarning",
    "numeric_rank",
    "sample_box",
    "check_involution",
    "fiber_partners",
    "check_closure",
    "CoinducedStructure",
    "CasimirReport",
    "verify_casimirs",
    "derived_fields",
    "derived_field_mismatch",
    "pairwise_commutation_of_derived",
    "function_values",
]

RANK_TOL = 1e-8


class RankDropWarning(UserWarning):
    """The rank of the bracket matrix changes across samples."""


class PairingWarning(UserWarning):
    """No two samples share an F-value, closure is unverifiable."""


def numeric_rank(M, rel_tol: float = RANK_TOL) -> int:
    """Rank by singular values above ``rel_tol`` times the largest one."""
    M = np.atleast_2d(np.asarray(M, dtype=float))
    if M.size == 0:
        return 0
    sv = np.linalg.svd(M, compute_uv=False)
    if sv[0] == 0.0:
        return 0
    return int(np.sum(sv > rel_tol * sv[0]))


@dataclass(frozen=True)
class Verdict:
    kind: str  # complete | partial | noncommutative | failed | inconclusive
    k: int = 0
    rank: int | None = None
    reason: str = ""

    def __str__(self) -> str:
        if self.kind == "complete" or self.kind == "partial":
            return f"{self.kind}({self.k})"
        if self.kind == "noncommutative":
            return f"noncommutative({self.k}, {self.rank})"
        return f"{self.kind}({self.reason})"

    @property
    def passed(self) -> bool:
        return self.kind in ("complete", "partial", "noncommutative")


@dataclass
class BracketReport:
    samples: np.ndarray
    matrices: np.ndarray  # (N, k, k)
    max_residual: float
    jacobian_ranks: list
    s_ranks: list
    verdict: Verdict
    tol: float
    closure_residual: float | None = None
    worst_pair: tuple | None = None  # 1-based function indices
    diagnostics: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "verdict": str(self.verdict),
            "passed": self.verdict.passed,
            "samples": int(len(self.samples)),
            "max_residual": float(self.max_residual),
            "tol": self.tol,
            "jacobian_ranks": sorted(set(int(r) for r in self.jacobian_ranks)),
            "s_ranks": sorted(set(int(r) for r in self.s_ranks)),
            "closure_residual": None if self.closure_residual is None else float(self.closure_residual),
            "worst_pair": None if self.worst_pair is None else list(self.worst_pair),
            "diagnostics": list(self.diagnostics),
        }


def sample_box(box: Sequence[tuple], count: int, rng: np.random.Generator | int | None = 0,
               singular: Sequence[Expression] = (), margin: float = 1e-6, max_tries: int = 100) -> np.ndarray:
    """Uniform samples in an axis-aligned box, rejecting points where any
    ``singular`` expression is within ``margin`` of zero.  Rows are points."""
    rng = np.random.default_rng(rng)
    lo = np.array([b[0] for b in box], dtype=float)
    hi = np.array([b[1] for b in box], dtype=float)
    if np.any(hi <= lo):
        raise ValueError("degenerate sample box")
    out = []
    tries = 0
    while len(out) < count:
        if tries > max_tries * count:
            raise RuntimeError("could not draw enough samples away from the singular set")
        tries += 1
        z = lo + (hi - lo) * rng.random(len(lo))
        if all(abs(evaluate(g, z, order=0)[0]) > margin for g in singular):
            out.append(z)
    return np.array(out).reshape(count, len(lo))


def function_values(functions: Sequence[Expression], points) -> np.ndarray:
    """F(z) for rows z of ``points``: shape (N, k)."""
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    return np.array([evaluate(f, pts.T, order=0)[0] for f in functions]).T


def _jacobian(functions, z) -> np.ndarray:
    return np.array([evaluate(f, z, order=1)[1] for f in functions])


def _brackets(functions, points, rank_tol):
    mats, jranks = [], []
    for z in points:
        mats.append(bracket_matrix(functions, z))
        jranks.append(numeric_rank(_jacobian(functions, z), rank_tol))
    return np.array(mats), jranks


def check_involution(functions: Sequence[Expression], samples, tol: float = 1e-12,
                     rank_tol: float = RANK_TOL) -> BracketReport:
    """Check ``{F_i, F_j} = 0`` and independence of ``dF_i`` at the samples."""
    functions = list(functions)
    k = len(functions)
    n = functions[0].dim // 2
    if k < 1:
        raise ValueError("no functions given")
    points = np.atleast_2d(np.asarray(samples, dtype=float))
    mats, jranks = _brackets(functions, points, rank_tol)
    absm = np.abs(mats)
    max_res = float(absm.max()) if absm.size else 0.0
    worst = None
    if k > 1:
        flat = absm.max(axis=0)
        i, j = np.unravel_index(np.argmax(flat), flat.shape)
        worst = (int(min(i, j)) + 1, int(max(i, j)) + 1)
    s_ranks = [numeric_rank(m, rank_tol) for m in mats]
    if max_res >= tol:
        verdict = Verdict("failed", k, reason=f"involution residual {max_res:.3g} at pair {worst}")
    elif min(jranks) < k:
        bad = int(np.argmin(jranks))
        verdict = Verdict("failed", k, reason=f"dependent differentials at sample {bad}")
    elif k > n:
        verdict = Verdict("failed", k, reason=f"more than n = {n} functions cannot be in involution")
    elif k == n:
        verdict = Verdict("complete", k)
    else:
        verdict = Verdict("partial", k)
    return BracketReport(points, mats, max_res, jranks, s_ranks, verdict, tol, worst_pair=worst)


def fiber_partners(functions: Sequence[Expression], points, step: float = 0.1,
                   rng: np.random.Generator | int | None = 0, tol: float = 1e-13,
                   max_iter: int = 50) -> np.ndarray:
    """For each point, another point on the same level set of F.

    Moves a distance ``step`` along a random direction in ``ker dF`` and
    projects back onto the level set by minimum-norm Newton steps.
    """
    rng = np.random.default_rng(rng)
    functions = list(functions)
    out = []
    for z in np.atleast_2d(np.asarray(points, dtype=float)):
        target = function_values(functions, z)[0]
        J = _jacobian(functions, z)
        _, sv, Vt = np.linalg.svd(J)
        r = int(np.sum(sv > RANK_TOL * sv[0])) if sv.size and sv[0] > 0 else 0
        null = Vt[r:]
        if len(null) == 0:
            raise ValueError("dF has full rank: level sets are discrete")
        v = rng.standard_normal(len(null)) @ null
        w = z + step * v / np.linalg.norm(v)
        for _ in range(max_iter):
            res = function_values(functions, w)[0] - target
            if np.max(np.abs(res)) <= tol * (1 + np.max(np.abs(target))):
                break
            w = w - np.linalg.lstsq(_jacobian(functions, w), res, rcond=None)[0]
        out.append(w)
    return np.array(out)


def _group_by_value(values: np.ndarray, match_tol: float) -> list:
    groups: list[list[int]] = []
    reps: list[np.ndarray] = []
    for i, v in enumerate(values):
        for g, r in zip(groups, reps):
            if np.max(np.abs(v - r)) <= match_tol * (1 + np.max(np.abs(r))):
                g.append(i)
                break
        else:
            groups.append([i])
            reps.append(v)
    return groups


def check_closure(functions: Sequence[Expression], samples, match_tol: float = 1e-9, tol: float = 1e-8,
                  closure: "CoinducedStructure | None" = None, partners: bool = True,
                  rng: np.random.Generator | int | None = 0, rank_tol: float = RANK_TOL) -> BracketReport:
    """Check that ``{F_a, F_b}`` depends only on F, with constant rank ``2(k-n)``.

    Samples are grouped by F-value (within ``match_tol``); the closure
    residual is the largest spread of bracket matrices inside a group.  With
    ``partners`` a level-set partner is generated for every sample so that
    every group has at least two members.  If ``closure`` is given the brackets
    are also compared with ``s(F(z))``.
    """
    functions = list(functions)
    k = len(functions)
    n = functions[0].dim // 2
    if not n <= k < 2 * n:
        raise ValueError(f"closure needs n <= k < 2n, got k={k}, n={n}")
    points = np.atleast_2d(np.asarray(samples, dtype=float))
    if partners:
        points = np.vstack([points, fiber_partners(functions, points, rng=rng)])
    mats, jranks = _brackets(functions, points, rank_tol)
    values = function_values(functions, points)
    diagnostics = []

    closure_res = None
    groups = [g for g in _group_by_value(values, match_tol) if len(g) > 1]
    if groups:
        closure_res = 0.0
        for g in groups:
            block = mats[g]
            closure_res = max(closure_res, float(np.max(np.abs(block - block[0]))))
    else:
        msg = "no two samples share an F-value; closure unverifiable"
        warnings.warn(msg, PairingWarning, stacklevel=2)
        diagnostics.append(msg)
    if closure is not None:
        model = np.array([closure.matrix(x) for x in values])
        dev = float(np.max(np.abs(mats - model)))
        closure_res = dev if closure_res is None else max(closure_res, dev)

    s_ranks = [numeric_rank(m, rank_tol) for m in mats]
    expected = 2 * (k - n)
    if len(set(s_ranks)) > 1:
        bad = next(i for i, r in enumerate(s_ranks) if r != max(s_ranks))
        msg = f"rank drop: rank(s) varies over samples {sorted(set(s_ranks))}, e.g. sample {bad}"
        warnings.warn(msg, RankDropWarning, stacklevel=2)
        diagnostics.append(msg)
    max_res = float(np.max(np.abs(mats + np.swapaxes(mats, 1, 2))))

    if closure_res is None:
        verdict = Verdict("inconclusive", k, reason="no fiber pairs")
    elif closure_res >= tol:
        verdict = Verdict("failed", k, reason=f"closure residual {closure_res:.3g}")
    elif min(jranks) < k:
        verdict = Verdict("failed", k, reason=f"dependent differentials at sample {int(np.argmin(jranks))}")
    elif any(r != expected for r in s_ranks):
        verdict = Verdict("failed", k, reason=f"rank(s) {sorted(set(s_ranks))} != 2(k-n) = {expected}")
    elif k == n:
        verdict = Verdict("complete", k)
    else:
        verdict = Verdict("noncommutative", k, rank=expected)
    return BracketReport(points, mats, max_res, jranks, s_ranks, verdict, tol,
                         closure_residual=closure_res, diagnostics=diagnostics)


@dataclass
class CoinducedStructure:
    """Poisson tensor ``s_ab(x)`` on the image of F, coordinates named after the functions."""

    n: int
    names: tuple
    s: list  # k x k nested list of Expressions over ``names``

    @property
    def k(self) -> int:
        return len(self.names)

    @property
    def kernel_dim(self) -> int:
        return 2 * self.n - self.k

    @classmethod
    def from_entries(cls, n: int, names: Sequence[str], entries: dict) -> "CoinducedStructure":
        """Build from ``{(a, b): source}`` for a < b; antisymmetry fills the rest."""
        names = tuple(names)
        index = {nm: i for i, nm in enumerate(names)}
        zero = parse("0", names)
        s = [[zero] * len(names) for _ in names]
        for (a, b), src in entries.items():
            i, j = index[a], index[b]
            e = src if isinstance(src, Expression) else parse(src, names)
            s[i][j] = e
            s[j][i] = Expression(Neg(e.root), names)
        return cls(n, names, s)

    def matrix(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return np.array([[evaluate(e, x, order=0)[0] for e in row] for row in self.s])

    def rank(self, x, rank_tol: float = RANK_TOL) -> int:
        return numeric_rank(self.matrix(x), rank_tol)

    def check(self, samples, tol: float = 1e-12) -> list:
        """Antisymmetry and constant rank over ``samples``; returns diagnostics."""
        diags = []
        ranks = []
        for x in np.atleast_2d(samples):
            S = self.matrix(x)
            if np.max(np.abs(S + S.T)) > tol:
                diags.append(f"s not antisymmetric at {x.tolist()}")
            ranks.append(numeric_rank(S))
        if len(set(ranks)) > 1:
            msg = f"rank drop: rank(s) takes values {sorted(set(ranks))}"
            warnings.warn(msg, RankDropWarning, stacklevel=2)
            diags.append(msg)
        return diags


@dataclass
class CasimirReport:
    residual: float
    ranks: list
    expected_rank: int
    failures: list = field(default_factory=list)

    @property
    def independent(self) -> bool:
        return all(r == self.expected_rank for r in self.ranks)

    def passed(self, tol: float = 1e-12) -> bool:
        return self.residual < tol and self.independent

    def to_dict(self, tol: float = 1e-12) -> dict:
        return {"residual": self.residual, "tol": tol, "independent": self.independent,
                "ranks": sorted(set(self.ranks)), "expected_rank": self.expected_rank,
                "passed": self.passed(tol), "failures": self.failures[:5]}


def verify_casimirs(S: CoinducedStructure, casimirs: Sequence[Expression], samples,
                    rank_tol: float = RANK_TOL) -> CasimirReport:
    """Residual ``max ||s(x) grad C_i(x)||`` and independence of the ``grad C_i``."""
    casimirs = list(casimirs)
    residual = 0.0
    ranks, failures = [], []
    for x in np.atleast_2d(np.asarray(samples, dtype=float)):
        M = S.matrix(x)
        G = np.array([evaluate(c, x, order=1)[1] for c in casimirs])
        for g in G:
            residual = max(residual, float(np.linalg.norm(M @ g)))
        # absolute floor: constant functions have exactly zero gradient
        r = numeric_rank(G, rank_tol) if np.max(np.abs(G)) > 1e-300 else 0
        ranks.append(r)
        if r != S.kernel_dim:
            failures.append(f"gradients of Casimirs have rank {r} != {S.kernel_dim} at x={x.tolist()}")
    return CasimirReport(residual, ranks, S.kernel_dim, failures)


def derived_fields(S: CoinducedStructure, casimirs: Sequence[Expression],
                   functions: Sequence[Expression]) -> list:
    """``X_{C_i o F} = (dC_i/dx_a)(F) X_{F_a}`` as fields on phase space."""
    functions = list(functions)
    d = functions[0].dim
    W = SymplecticChart(d // 2, functions[0].coords).omega

    def make(C: Expression) -> VectorField:
        def jet(z, order):
            jets = [evaluate(f, z, order=2 if order else 1) for f in functions]
            x = np.stack([j[0] for j in jets])
            grads = np.stack([j[1] for j in jets])  # (k, d)+S
            _, dC, HC = evaluate(C, x, order=2 if order else 1)
            Xs = np.tensordot(W, grads, axes=([1], [1]))  # (d, k)+S
            Xs = np.moveaxis(Xs, 1, 0)  # (k, d)+S
            value = np.einsum("a...,ak...->k...", dC, Xs)
            if not order:
                return value, None
            jac = 0.0
            for a, (_, _, Hf) in enumerate(jets):
                jac = jac + dC[a] * np.tensordot(W, Hf, axes=1)
            # d(dC_a o F)/dz = sum_b HC[a, b] grad F_b
            dcoef = np.einsum("ab...,bl...->al...", HC, grads)
            jac = jac + np.einsum("ak...,al...->kl...", Xs, dcoef)
            return value, jac

        return VectorField(d, jet, f"X[{C} o F]")

    return [make(C) for C in casimirs]


def derived_field_mismatch(fields: Sequence[VectorField], casimirs: Sequence[Expression],
                           functions: Sequence[Expression], samples) -> float:
    """Largest deviation between each derived field and ``X_{C o F}`` computed
    directly from the composed expression."""
    worst = 0.0
    for X, C in zip(fields, casimirs):
        direct = hamiltonian_field(compose(C, list(functions)))
        for z in np.atleast_2d(samples):
            worst = max(worst, float(np.max(np.abs(X(z) - direct(z)))))
    return worst


def pairwise_commutation_of_derived(fields: Sequence[VectorField], samples) -> float:
    """``max |{C_i o F, C_j o F}|`` = ``max |Omega(X_i, X_j)|`` over samples."""
    fields = list(fields)
    if len(fields) < 2:
        return 0.0
    d = fields[0].dim
    W = SymplecticChart(d // 2).omega
    worst = 0.0
    for z in np.atleast_2d(samples):
        V = np.array([X(z) for X in fields])
        B = V @ W @ V.T
        worst = max(worst, float(np.max(np.abs(B))))
    return worst
