"""Flows of vector fields: adaptive RK 4(5) integration, composed flow actions
of R^m, commutation and completeness probes."""
from __future__ import annotations

import csv
import logging
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .symplectic import VectorField

log = logging.getLogger(__name__)

__all__ = [
    "IntegrationError",
    "BlowUpError",
    "StepUnderflowError",
    "Trajectory",
    "integrate",
    "trajectory",
    "sample_orbit",
    "FlowAction",
    "flow_compose",
    "commutation_residual",
    "CompletenessVerdict",
    "completeness_probe",
    "write_trajectory_csv",
    "DEFAULT_BOUND",
    "DEFAULT_HORIZON",
]

DEFAULT_BOUND = 1e8
DEFAULT_HORIZON = 100.0


class IntegrationError(RuntimeError):
    def __init__(self, message: str, t: float, leg: int | None = None):
        self.t = t
        self.leg = leg
        super().__init__(message)


class BlowUpError(IntegrationError):
    """State norm exceeded the bound: the flow is suspected incomplete."""


class StepUnderflowError(IntegrationError):
    pass


# Dormand-Prince 5(4)
_C = np.array([0.0, 1 / 5, 3 / 10, 4 / 5, 8 / 9, 1.0, 1.0])
_A = [
    [],
    [1 / 5],
    [3 / 40, 9 / 40],
    [44 / 45, -56 / 15, 32 / 9],
    [19372 / 6561, -25360 / 2187, 64448 / 6561, -212 / 729],
    [9017 / 3168, -355 / 33, 46732 / 5247, 49 / 176, -5103 / 18656],
    [35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84],
]
_B5 = np.array([35 / 384, 0.0, 500 / 1113, 125 / 192, -2187 / 6784, 11 / 84, 0.0])
_B4 = np.array([5179 / 57600, 0.0, 7571 / 16695, 393 / 640, -92097 / 339200, 187 / 2100, 1 / 40])
_E = _B5 - _B4

_SAFETY = 0.9
_ALPHA = 0.7 / 5  # PI controller exponents (Gustafsson)
_BETA = 0.4 / 5


@dataclass
class Trajectory:
    t: np.ndarray  # (K,)
    states: np.ndarray  # (K, d) or (K, d, N)

    @property
    def end(self) -> np.ndarray:
        return self.states[-1]


def _rk45(X: VectorField, y0: np.ndarray, t_end: float, tol: float, bound: float,
          t_eval: np.ndarray | None, record: bool, max_steps: int) -> Trajectory:
    f = X
    y = np.array(y0, dtype=float)
    t = 0.0
    direction = 1.0 if t_end >= 0 else -1.0
    span = abs(t_end)
    ts, ys = [0.0], [y.copy()]
    if span == 0.0:
        if t_eval is not None:
            out = np.array([y.copy() for _ in t_eval])
            return Trajectory(np.asarray(t_eval, dtype=float), out)
        return Trajectory(np.array(ts), np.array(ys))

    targets = [] if t_eval is None else sorted((abs(x) for x in t_eval))
    out_states: dict[float, np.ndarray] = {}
    ti = 0
    while ti < len(targets) and targets[ti] == 0.0:
        out_states[0.0] = y.copy()
        ti += 1

    k1 = f(y)
    d0 = np.max(np.abs(y))
    d1 = np.max(np.abs(k1))
    h = 0.01 * d0 / d1 if d0 > 1e-5 and d1 > 1e-5 else 1e-3
    h_prop = min(max(h, 1e-6), span)
    err_prev = 1.0
    steps = 0
    while t < span:
        if steps >= max_steps:
            raise IntegrationError(f"step budget {max_steps} exhausted at t={direction * t:g}", direction * t)
        if h_prop < 1e-13 * span:
            raise StepUnderflowError(f"step size underflow at t={direction * t:g}", direction * t)
        next_stop = targets[ti] if ti < len(targets) else span
        h = h_prop
        truncated = t + h >= next_stop
        if truncated:
            h = next_stop - t
        sh = direction * h
        ks = [k1]
        for s in range(1, 7):
            y_stage = y + sh * sum(a * k for a, k in zip(_A[s], ks))
            ks.append(f(y_stage))
        y_new = y_stage  # FSAL: the last stage is evaluated at the 5th order solution
        err_vec = sh * sum(e * k for e, k in zip(_E, ks))
        scale = tol * (1.0 + np.maximum(np.abs(y), np.abs(y_new)))
        with np.errstate(invalid="ignore", over="ignore"):
            err = float(np.max(np.abs(err_vec) / scale))
        steps += 1
        if not np.isfinite(err) or not np.all(np.isfinite(y_new)):
            if np.max(np.abs(y)) > 1e-3 * bound:
                raise BlowUpError(f"state diverged near t={direction * t:g}", direction * t)
            h_prop = 0.2 * h
            continue
        if err <= 1.0:
            t = next_stop if truncated else t + h
            y = y_new
            k1 = ks[6]
            if record:
                ts.append(direction * t)
                ys.append(y.copy())
            while ti < len(targets) and targets[ti] <= t:
                out_states[targets[ti]] = y.copy()
                ti += 1
            if np.max(np.abs(y)) > bound:
                raise BlowUpError(f"state norm exceeded {bound:g} at t={direction * t:g}", direction * t)
            fac = _SAFETY * max(err, 1e-10) ** -_ALPHA * err_prev**_BETA
            if not truncated:
                h_prop = h * min(5.0, max(0.2, fac))
            err_prev = max(err, 1e-4)
        else:
            h_prop = h * max(0.2, _SAFETY * err**-0.2)

    if t_eval is not None:
        out = np.array([out_states[abs(x)] for x in t_eval])
        return Trajectory(np.asarray(t_eval, dtype=float), out)
    if not record:
        return Trajectory(np.array([0.0, direction * t]), np.array([ys[0], y]))
    return Trajectory(np.array(ts), np.array(ys))


def integrate(X: VectorField, start, t: float, tol: float = 1e-10, *, bound: float = DEFAULT_BOUND,
              horizon: float | None = None, max_steps: int = 1_000_000) -> np.ndarray:
    """Endpoint of the integral curve of ``X`` from ``start`` after time ``t``.

    ``start`` may be a single point ``(d,)`` or a batch ``(d, N)`` integrated
    with a shared step sequence.
    """
    if horizon is not None and abs(t) > horizon:
        raise ValueError(f"|t| = {abs(t):g} exceeds horizon {horizon:g}")
    start = np.asarray(start, dtype=float)
    if t == 0:
        return start.copy()
    return _rk45(X, start, float(t), tol, bound, None, False, max_steps).end


def trajectory(X: VectorField, start, t: float, tol: float = 1e-10, *, bound: float = DEFAULT_BOUND,
               t_eval: Sequence[float] | None = None, max_steps: int = 1_000_000) -> Trajectory:
    """Accepted-step trajectory of ``X`` (or states at ``t_eval``, which must
    share the sign of ``t`` and lie within it)."""
    start = np.asarray(start, dtype=float)
    if t_eval is not None:
        t_eval = np.asarray(t_eval, dtype=float)
        if np.any(np.abs(t_eval) > abs(t) + 1e-15) or np.any(t_eval * t < 0):
            raise ValueError("t_eval must lie between 0 and t")
    return _rk45(X, start, float(t), tol, bound, t_eval, t_eval is None, max_steps)


def sample_orbit(X: VectorField, start, period: float, nodes: int, tol: float = 1e-12) -> np.ndarray:
    """``nodes + 1`` points at uniform times on ``[0, period]`` (rows)."""
    times = np.linspace(0.0, period, nodes + 1)
    return trajectory(X, start, period, tol, t_eval=times).states


def write_trajectory_csv(path, traj: Trajectory) -> None:
    """CSV with header ``t,x1,...,xd``; one row per stored state.  ``path``
    may also be an open text stream."""
    states = np.asarray(traj.states)
    d = states.shape[1]

    def write(fh):
        w = csv.writer(fh)
        w.writerow(["t"] + [f"x{i + 1}" for i in range(d)])
        for t, s in zip(traj.t, states):
            w.writerow([repr(float(t))] + [repr(float(v)) for v in s])

    if hasattr(path, "write"):
        write(path)
    else:
        with open(path, "w", newline="") as fh:
            write(fh)


@dataclass
class FlowAction:
    """The action of R^m on phase space by composed flows of ``fields``."""

    fields: list
    base: np.ndarray
    tol: float = 1e-10
    horizon: float = DEFAULT_HORIZON
    bound: float = DEFAULT_BOUND

    def __post_init__(self):
        self.base = np.asarray(self.base, dtype=float)
        for i, X in enumerate(self.fields):
            v = X(self.base)
            if not np.all(np.isfinite(v)):
                raise ValueError(f"field {i} is not finite at the base point")

    @property
    def m(self) -> int:
        return len(self.fields)

    def __call__(self, t, start=None) -> np.ndarray:
        return flow_compose(self, t, start)

    def with_base(self, base) -> "FlowAction":
        return FlowAction(self.fields, base, self.tol, self.horizon, self.bound)

    def frame(self, point) -> np.ndarray:
        """Matrix whose columns are the fields at ``point``."""
        return np.column_stack([X(point) for X in self.fields])


def flow_compose(action: FlowAction, t, start=None) -> np.ndarray:
    """``Phi(t)``: flow of X_1 for t_1, then X_2 for t_2, ..., from the base point.

    ``start`` overrides the base point (may be a batch ``(d, N)``).
    """
    t = np.atleast_1d(np.asarray(t, dtype=float))
    if t.shape != (action.m,):
        raise ValueError(f"expected {action.m} flow times")
    z = action.base if start is None else np.asarray(start, dtype=float)
    for i, (X, ti) in enumerate(zip(action.fields, t)):
        try:
            z = integrate(X, z, ti, action.tol, bound=action.bound, horizon=action.horizon)
        except IntegrationError as exc:
            exc.leg = i
            exc.args = (f"leg {i}: {exc.args[0]}",)
            raise
    return z


def commutation_residual(X: VectorField, Y: VectorField, point, t: float, s: float, tol: float = 1e-12) -> float:
    """Distance between ``phi_X^t phi_Y^s(point)`` and ``phi_Y^s phi_X^t(point)``."""
    a = integrate(X, integrate(Y, point, s, tol), t, tol)
    b = integrate(Y, integrate(X, point, t, tol), s, tol)
    return float(np.linalg.norm(a - b))


@dataclass
class CompletenessVerdict:
    point: np.ndarray
    status: str  # "no-blowup-within-horizon" | "blowup-detected"
    t_star: float | None = None
    horizon: float = DEFAULT_HORIZON
    bound: float = DEFAULT_BOUND
    heuristic: bool = field(default=True, init=False)

    @property
    def ok(self) -> bool:
        return self.status == "no-blowup-within-horizon"


def completeness_probe(X: VectorField, points, horizon: float = DEFAULT_HORIZON,
                       bound: float = DEFAULT_BOUND, tol: float = 1e-8) -> list[CompletenessVerdict]:
    """Integrate forward and backward to ``horizon`` from each point.

    This is a heuristic: finite-time blow-up inside the horizon is detected,
    completeness itself cannot be decided numerically.
    """
    if horizon <= 0 or bound <= 0:
        raise ValueError("horizon and bound must be positive")
    verdicts = []
    for z in np.atleast_2d(np.asarray(points, dtype=float)):
        status, t_star = "no-blowup-within-horizon", None
        for sign in (1.0, -1.0):
            try:
                integrate(X, z, sign * horizon, tol, bound=bound)
            except IntegrationError as exc:
                status, t_star = "blowup-detected", exc.t
                break
        verdicts.append(CompletenessVerdict(z, status, t_star, horizon, bound))
    return verdicts
