"""Period lattices of flow actions, fiber classification R^{m-h} x T^h,
action integrals and numerical action-angle charts.

Orientation: with ``Omega(X_F, .) = dF`` and ``Omega = dI ^ dy`` one finds
``X_I = -d/dy``, so the angle conjugate to an action increases *against* the
flow.  Cycles are therefore traversed along ``-b`` for a lattice vector ``b``
(:data:`ANGLE_ORIENTATION`), which makes the oscillator action ``I = E``.
"""
from __future__ import annotations

import itertools
import logging
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Sequence

import numpy as np

from .exprdsl import Expression, evaluate, parse
from .flows import FlowAction, trajectory
from .symplectic import SymplecticChart, VectorField

log = logging.getLogger(__name__)

__all__ = [
    "ANGLE_ORIENTATION",
    "DegenerateJacobianError",
    "OpenLoopError",
    "GridDegeneracyError",
    "PeriodLattice",
    "FiberType",
    "flow_grid",
    "newton_return",
    "reduce_lattice",
    "detect_lattice",
    "refine_lattice",
    "classify_fiber",
    "combined_field",
    "cycle_loop",
    "action_integral",
    "CoordinateChart",
    "ActionAngleChart",
    "darboux_residual",
]

ANGLE_ORIENTATION = -1.0


class DegenerateJacobianError(np.linalg.LinAlgError):
    def __init__(self, t):
        self.t = np.asarray(t, dtype=float)
        super().__init__(f"singular Newton system at candidate t={self.t.tolist()}")


class OpenLoopError(ValueError):
    pass


class GridDegeneracyError(np.linalg.LinAlgError):
    pass


@dataclass
class PeriodLattice:
    m: int
    basis: np.ndarray  # (h, m)
    residuals: np.ndarray  # (h,)
    radius: float
    step: float
    diagnostics: list = field(default_factory=list)

    @property
    def h(self) -> int:
        return int(len(self.basis))

    @property
    def note(self) -> str:
        return "no returns found in box" if self.h == 0 else ""

    def contains(self, t, tol: float = 1e-6) -> bool:
        """Whether ``t`` is an integer combination of the basis."""
        t = np.asarray(t, dtype=float)
        if self.h == 0:
            return bool(np.linalg.norm(t) <= tol)
        c, *_ = np.linalg.lstsq(self.basis.T, t, rcond=None)
        return bool(np.linalg.norm(self.basis.T @ np.round(c) - t) <= tol)

    def same_lattice(self, other: "PeriodLattice", tol: float = 1e-6) -> bool:
        return self.h == other.h and all(other.contains(b, tol) for b in self.basis) and all(
            self.contains(b, tol) for b in other.basis
        )

    def to_dict(self) -> dict:
        return {
            "m": self.m,
            "h": self.h,
            "basis": self.basis.tolist(),
            "residuals": self.residuals.tolist(),
            "search_radius": self.radius,
            "grid_step": self.step,
            "note": self.note,
            "diagnostics": list(self.diagnostics),
        }


@dataclass(frozen=True)
class FiberType:
    m: int
    h: int

    @property
    def label(self) -> str:
        a = self.m - self.h
        parts = []
        if a:
            parts.append(f"R^{a}")
        if self.h:
            parts.append(f"T^{self.h}")
        return " x ".join(parts) if parts else "point"

    @property
    def compact(self) -> bool:
        return self.h == self.m

    def __str__(self) -> str:
        return self.label


def classify_fiber(lattice: PeriodLattice) -> FiberType:
    return FiberType(lattice.m, lattice.h)


def flow_grid(action: FlowAction, axis: np.ndarray, tol: float | None = None) -> np.ndarray:
    """``Phi(t)`` for every ``t`` in ``axis^m``; shape ``(len(axis),)*m + (d,)``.

    Legs are integrated in batches: all points reached after leg ``i`` are
    pushed together along leg ``i + 1``.
    """
    tol = action.tol if tol is None else tol
    axis = np.asarray(axis, dtype=float)
    neg = axis[axis < 0][::-1]
    pos = axis[axis >= 0]
    states = action.base[:, None]  # (d, N)
    for X in action.fields:
        parts = {}
        for times in (neg, pos):
            if len(times) == 0:
                continue
            tr = trajectory(X, states, times[-1], tol, bound=action.bound, t_eval=times)
            for t, s in zip(times, tr.states):
                parts[float(t)] = s
        # (G, d, N) -> (d, N, G): new leg index varies fastest
        stacked = np.stack([parts[float(t)] for t in axis], axis=-1)
        states = stacked.reshape(stacked.shape[0], -1)
    G = len(axis)
    m = action.m
    # flattened index order: leg 1 slowest
    return states.T.reshape((G,) * m + (states.shape[0],))


def _newton_phase(action: FlowAction, t, z, target: float, max_iter: int):
    res = float(np.linalg.norm(z - action.base))
    history = [res]
    for _ in range(max_iter):
        if res <= target:
            break
        J = action.frame(z)
        sv = np.linalg.svd(J, compute_uv=False)
        if sv[-1] <= 1e-10 * max(sv[0], 1e-300):
            raise DegenerateJacobianError(t)
        dt = np.linalg.lstsq(J, action.base - z, rcond=None)[0]
        t = t + dt
        z = action(dt, start=z)
        res = float(np.linalg.norm(z - action.base))
        history.append(res)
        if len(history) > 4 and res > 0.5 * history[-4]:
            break
        if np.linalg.norm(dt) < 1e-15 * (1 + np.linalg.norm(t)):
            break
    return t, z, res


def newton_return(action: FlowAction, t0, tol: float = 1e-10, max_iter: int = 30, fine_tol: float = 1e-12):
    """Gauss-Newton on ``t -> Phi(t) - base``.  Returns ``(t, residual)``.

    The Jacobian columns are the fields at ``Phi(t)``; this is exact when the
    fields commute.  Corrections integrate only the increment
    (``Phi(t + dt) = Phi(dt) Phi(t)``).  A coarse phase at integrator
    tolerance 1e-9 rejects non-returns cheaply; the fine phase runs at
    ``fine_tol`` and the reported residual is recomputed from the base point.
    """
    t = np.array(t0, dtype=float)
    coarse = FlowAction(action.fields, action.base, max(action.tol, 1e-9), np.inf, action.bound)
    fine = FlowAction(action.fields, action.base, min(action.tol, fine_tol), np.inf, action.bound)
    t, z, res = _newton_phase(coarse, t, coarse(t), 1e-6, max_iter)
    if res > 1e-4:
        return t, res
    z = fine(t)
    t1, z, res = _newton_phase(fine, t, z, 0.1 * tol, max_iter)
    if t1 is t:
        return t, res
    return t1, float(np.linalg.norm(fine(t1) - action.base))


def _gauss_reduce(basis: list) -> list:
    """Pairwise reduction until no vector shortens by subtracting a multiple of another."""
    basis = [np.array(b, dtype=float) for b in basis]
    changed = True
    while changed:
        changed = False
        basis.sort(key=lambda b: b @ b)
        for i, j in itertools.permutations(range(len(basis)), 2):
            bi, bj = basis[i], basis[j]
            mu = np.round(bi @ bj / (bj @ bj))
            if mu != 0:
                cand = bi - mu * bj
                if cand @ cand < bi @ bi * (1 - 1e-12):
                    basis[i] = cand
                    changed = True
    return basis


def _normalize_sign(b: np.ndarray, zero_tol: float) -> np.ndarray:
    for c in b:
        if abs(c) > zero_tol:
            return b if c > 0 else -b
    return b


def _integer_row_basis(N: list) -> list:
    """Row-style Hermite reduction of an integer matrix; returns the nonzero rows."""
    rows = [list(r) for r in N]
    out = []
    cols = len(rows[0]) if rows else 0
    for c in range(cols):
        while True:
            live = [r for r in rows if r[c] != 0]
            if len(live) <= 1:
                break
            live.sort(key=lambda r: abs(r[c]))
            pivot = live[0]
            for r in live[1:]:
                q = r[c] // pivot[c]
                for j in range(cols):
                    r[j] -= q * pivot[j]
        pivot = next((r for r in rows if r[c] != 0), None)
        if pivot is not None:
            out.append(pivot)
            rows = [r for r in rows if r is not pivot]
    return out


def reduce_lattice(vectors: Sequence, zero_tol: float = 1e-6, max_denominator: int = 1000) -> np.ndarray:
    """Basis of the lattice generated by ``vectors`` (rows), Gauss-reduced.

    An independent subset spans a sublattice of finite index; the generators
    have rational coordinates over it, and the integer row reduction of the
    cleared coordinates gives the full lattice exactly.
    """
    m = len(vectors[0]) if len(vectors) else 0
    vecs = [np.asarray(v, dtype=float) for v in vectors if np.linalg.norm(v) > zero_tol]
    vecs.sort(key=lambda v: v @ v)
    B0: list[np.ndarray] = []
    for v in vecs:
        sv = np.linalg.svd(np.array(B0 + [v]), compute_uv=False)
        if len(sv) == len(B0) + 1 and sv[-1] > zero_tol:
            B0.append(v)
    if not B0:
        return np.zeros((0, m))
    B0 = np.array(B0)
    C = np.linalg.lstsq(B0.T, np.array(vecs).T, rcond=None)[0].T
    fracs = [[Fraction(float(c)).limit_denominator(max_denominator) for c in row] for row in C]
    D = math.lcm(*(f.denominator for row in fracs for f in row))
    N = [[int(f * D) for f in row] for row in fracs]
    H = np.array(_integer_row_basis(N), dtype=float) / D
    basis = [_normalize_sign(b, zero_tol) for b in _gauss_reduce(list(H @ B0))]
    basis.sort(key=lambda b: (round(float(b @ b), 8), [-abs(c) for c in b]))
    return np.array(basis).reshape(len(basis), m)


def _local_minima(D: np.ndarray) -> list:
    out = []
    padded = np.pad(D, 1, constant_values=np.inf)
    for idx in np.argwhere(np.isfinite(D)):
        centre = D[tuple(idx)]
        window = padded[tuple(slice(i, i + 3) for i in idx)]
        if centre <= window.min():
            out.append(tuple(idx))
    return out


def detect_lattice(action: FlowAction, radius: float = 10.0, step: float = 0.05, tol: float = 1e-8,
                   newton_tol: float = 1e-10, capture: float | None = None) -> PeriodLattice:
    """Period lattice of the flow action at its base point, searched in ``[-R, R]^m``.

    Grid local minima of ``||Phi(t) - base||`` below the capture distance are
    refined by Gauss-Newton; returns with residual below ``tol`` generate the
    lattice, which is reduced to a basis.
    """
    m = action.m
    G = int(np.floor(radius / step + 1e-9))
    axis = step * np.arange(-G, G + 1)
    grid = flow_grid(action, axis)
    D = np.linalg.norm(grid - action.base, axis=-1)
    speed = sum(np.linalg.norm(X(action.base)) for X in action.fields)
    if capture is None:
        # a return within half a cell of a grid node lies about this close
        capture = step * max(speed, 1e-12)
    candidates = []
    for idx in _local_minima(D):
        t0 = axis[list(idx)]
        nz = t0[np.abs(t0) > step / 2]
        # the return set is symmetric: keep one of t, -t
        if len(nz) == 0 or nz[0] < 0 or D[idx] > capture:
            continue
        candidates.append((float(np.linalg.norm(t0)), tuple(idx), t0))
    candidates.sort(key=lambda c: (c[0], c[1]))
    diagnostics = []
    returns: list[np.ndarray] = []
    basis = np.zeros((0, m))
    for _, _, t0 in candidates:
        if len(basis):
            c, *_ = np.linalg.lstsq(basis.T, t0, rcond=None)
            if np.linalg.norm(basis.T @ np.round(c) - t0) <= step * np.sqrt(m):
                continue
        t, res = newton_return(action, t0, newton_tol)
        if np.linalg.norm(t) < step / 2:
            continue
        if res > tol:
            diagnostics.append(f"candidate {t0.tolist()} did not converge (residual {res:.2e})")
            continue
        returns.append(t)
        basis = reduce_lattice(returns, zero_tol=max(1e-6, 10 * tol))
    residuals = []
    polished = []
    for b in basis:
        bt, res = newton_return(action, b, newton_tol)
        polished.append(bt)
        residuals.append(res)
    basis = np.array(polished).reshape(len(polished), m) + 0.0
    if not len(basis):
        diagnostics.append("no returns found in box")
    return PeriodLattice(m, basis, np.array(residuals), radius, step, diagnostics)


def refine_lattice(action: FlowAction, guess, newton_tol: float = 1e-10, fine_tol: float = 1e-12) -> PeriodLattice:
    """Newton-polish a known basis at a (nearby) new base point."""
    guess = np.atleast_2d(np.asarray(guess, dtype=float))
    basis, res = [], []
    for b in guess:
        if b.size == 0:
            continue
        t, r = newton_return(action, b, newton_tol, fine_tol=fine_tol)
        basis.append(t)
        res.append(r)
    m = action.m
    return PeriodLattice(m, np.array(basis).reshape(len(basis), m), np.array(res), 0.0, 0.0)


def combined_field(fields: Sequence[VectorField], coeffs) -> VectorField:
    """The constant-coefficient combination ``sum_i c_i X_i``."""
    coeffs = np.asarray(coeffs, dtype=float)
    fields = list(fields)

    def jet(z, order):
        value, jac = 0.0, 0.0
        for c, X in zip(coeffs, fields):
            if c == 0:
                continue
            v, j = X.jet(z, order)
            value = value + c * v
            if order:
                jac = jac + c * j
        if np.isscalar(value):
            value = np.zeros_like(z)
            jac = np.zeros((len(z),) + z.shape) if order else None
        return value, (jac if order else None)

    return VectorField(fields[0].dim, jet, "combination")


def cycle_loop(action: FlowAction, lattice_vector, nodes: int = 256, orientation: float = ANGLE_ORIENTATION,
               tol: float = 1e-12) -> np.ndarray:
    """Closed curve ``s -> Phi(orientation * s * b)``, ``s`` uniform in [0, 1].

    For commuting fields this is the integral curve of ``sum_i b_i X_i``.
    Returns ``nodes + 1`` rows, the last one closing the loop.
    """
    b = orientation * np.asarray(lattice_vector, dtype=float)
    Y = combined_field(action.fields, b)
    times = np.linspace(0.0, 1.0, nodes + 1)
    return trajectory(Y, action.base, 1.0, tol, t_eval=times).states


def _default_theta(d: int) -> list:
    n = d // 2
    names = SymplecticChart(n).names
    # p . dq: zero dp-components, p_i as dq_i-component
    return [parse("0", names)] * n + [parse(names[i], names) for i in range(n)]


def _trapezoid(theta, loop: np.ndarray) -> float:
    vals = np.array([evaluate(c, loop.T, order=0)[0] for c in theta]).T  # (N+1, d)
    dz = np.diff(loop, axis=0)
    mid = 0.5 * (vals[1:] + vals[:-1])
    return float(np.sum(mid * dz))


def action_integral(loop, theta: Sequence[Expression] | None = None, closure_tol: float = 1e-8) -> float:
    """``(1/2 pi) * loop integral of theta`` by the composite trapezoid rule on
    the nodes, with one Richardson step against every other node.

    ``theta`` defaults to ``sum_i p_i dq_i``.  An odd number of segments skips
    the extrapolation.
    """
    loop = np.atleast_2d(np.asarray(loop, dtype=float))
    if len(loop) < 2:
        return 0.0
    if np.linalg.norm(loop[-1] - loop[0]) > closure_tol:
        raise OpenLoopError(f"loop does not close: gap {np.linalg.norm(loop[-1] - loop[0]):.3g}")
    d = loop.shape[1]
    theta = _default_theta(d) if theta is None else list(theta)
    fine = _trapezoid(theta, loop)
    segments = len(loop) - 1
    if segments % 2 == 0 and segments >= 4:
        coarse = _trapezoid(theta, loop[::2])
        value = (4.0 * fine - coarse) / 3.0
    else:
        value = fine
    return value / (2.0 * np.pi)


class CoordinateChart:
    """A coordinate map ``z -> w`` with some components periodic (mod 2 pi)."""

    def __init__(self, func: Callable[[np.ndarray], np.ndarray], periodic: Sequence[bool]):
        self.func = func
        self.periodic = np.asarray(periodic, dtype=bool)

    def coordinates(self, z) -> np.ndarray:
        return np.asarray(self.func(np.asarray(z, dtype=float)), dtype=float)


class ActionAngleChart(CoordinateChart):
    """Numerical action-angle coordinates ``(I, y)`` near a fiber.

    ``section`` maps F-values to a point on the corresponding fiber.  For each
    point the lattice is Newton-continued from ``lattice`` (found on the
    reference fiber); compact actions are loop integrals over the cycles, the
    remaining actions are the F-coordinates along completing unit vectors.
    Writing flow times as ``t = A^T s`` with the rows of ``A`` the gradients
    of the actions with respect to F (``b / 2 pi`` for a cycle ``b``), the
    angles are ``y = ANGLE_ORIENTATION * s``; compact angles are reduced mod
    2 pi.  Noncompact angles keep raw flow-time units.
    """

    def __init__(self, functions: Sequence[Expression], section: Callable, lattice: PeriodLattice,
                 nodes: int = 128, tol: float = 1e-10, theta: Sequence[Expression] | None = None,
                 seeds: int | None = None):
        from .symplectic import hamiltonian_field

        self.functions = list(functions)
        self.fields = [hamiltonian_field(f) for f in self.functions]
        self.section = section
        self.reference = np.atleast_2d(lattice.basis).reshape(lattice.h, lattice.m)
        self.m = lattice.m
        self.h = lattice.h
        self.nodes = nodes
        self.tol = tol
        self.theta = theta
        self.seeds = seeds if seeds is not None else (16 if lattice.h <= 1 else 8)
        self._complement = self._complete(self.reference)
        super().__init__(self._coordinates, [False] * self.m + [True] * self.h + [False] * (self.m - self.h))

    @staticmethod
    def _complete(B: np.ndarray) -> list:
        m = B.shape[1]
        rows = list(B)
        extra = []
        for e in np.eye(m):
            trial = np.array(rows + extra + [e])
            if np.linalg.matrix_rank(trial, tol=1e-9) == len(trial):
                extra.append(e)
        return extra

    def values(self, z) -> np.ndarray:
        return np.array([evaluate(f, z, order=0)[0] for f in self.functions], dtype=float)

    def fiber_data(self, x):
        """Flow action at the section point, lattice basis, actions, the matrix whose
        rows are the action gradients with respect to F, and the cycle loops."""
        base = np.asarray(self.section(x), dtype=float)
        action = FlowAction(self.fields, base, self.tol)
        lat = refine_lattice(action, self.reference.reshape(self.h, self.m), 10 * self.tol, self.tol)
        B = lat.basis
        loops = [cycle_loop(action, b, self.nodes, tol=self.tol) for b in B]
        actions = [action_integral(loop, self.theta) for loop in loops]
        actions += [float(c @ x) for c in self._complement]
        A = np.array([b / (2 * np.pi) for b in B] + list(self._complement)).reshape(self.m, self.m)
        return action, B, np.array(actions), A, loops

    def _cell_points(self, action: FlowAction, B: np.ndarray):
        """Flow times ``c @ B`` on a uniform grid of the fundamental cell and their images."""
        grid = np.linspace(0.0, 1.0, self.seeds, endpoint=False)
        states = action.base[:, None]
        for b in B:
            Y = combined_field(action.fields, b)
            tr = trajectory(Y, states, grid[-1], self.tol, t_eval=grid)
            stacked = np.stack(list(tr.states), axis=-1)
            states = stacked.reshape(stacked.shape[0], -1)
        coeffs = np.array(list(itertools.product(grid, repeat=len(B))))
        return coeffs @ B, states.T

    def _flow_time(self, action: FlowAction, B: np.ndarray, z: np.ndarray, loops: list) -> np.ndarray:
        # the fields commute, so Phi(t + dt) = Phi(dt) applied to Phi(t): Newton
        # corrections only integrate the short increment
        t, w = np.zeros(self.m), action.base
        if self.h == 1:
            # the cycle nodes already sample the orbit: Phi(-s b)
            loop = loops[0][:-1]
            s = np.linspace(0.0, 1.0, len(loop) + 1)[:-1]
            times, images = ANGLE_ORIENTATION * s[:, None] * B[0], loop
            i = int(np.argmin(np.linalg.norm(images - z, axis=1)))
            t, w = times[i], images[i]
        elif self.h:
            times, images = self._cell_points(action, B)
            i = int(np.argmin(np.linalg.norm(images - z, axis=1)))
            t, w = times[i], images[i]
        for _ in range(50):
            r = w - z
            if np.linalg.norm(r) < 1e-13:
                break
            dt = np.linalg.lstsq(action.frame(w), -r, rcond=None)[0]
            t = t + dt
            w = action(dt, start=w)
            if np.linalg.norm(dt) < 1e-15:
                break
        return t

    def _coordinates(self, z):
        x = self.values(z)
        action, B, actions, A, loops = self.fiber_data(x)
        t = self._flow_time(action, B, z, loops)
        s = np.linalg.solve(A.T, t)
        y = ANGLE_ORIENTATION * s
        y[: self.h] = np.mod(y[: self.h] + np.pi, 2 * np.pi) - np.pi
        # order the conjugate pairs as (I_1..I_m, y_1..y_m)
        return np.concatenate([actions, y])


def darboux_residual(chart: CoordinateChart, samples, step: float = 1e-3, cond_max: float = 1e10) -> float:
    """Max deviation of the pulled-back canonical form from Omega at the samples.

    The Jacobian of ``z -> (I, y)`` is taken by central differences; periodic
    components are differenced modulo 2 pi.
    """
    worst = 0.0
    for z in np.atleast_2d(np.asarray(samples, dtype=float)):
        d = len(z)
        W = SymplecticChart(d // 2).omega
        J = np.empty((d, d))
        for k in range(d):
            e = np.zeros(d)
            e[k] = step
            diff = chart.coordinates(z + e) - chart.coordinates(z - e)
            per = chart.periodic
            diff[per] = np.mod(diff[per] + np.pi, 2 * np.pi) - np.pi
            J[:, k] = diff / (2 * step)
        if np.linalg.cond(J) > cond_max:
            raise GridDegeneracyError(f"coordinate Jacobian is singular at {z.tolist()}")
        pulled = J.T @ W @ J
        worst = max(worst, float(np.max(np.abs(pulled - W))))
    return worst
