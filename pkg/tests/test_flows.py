import io

import numpy as np
import pytest
from hypothesis import given, strategies as st

from integrable.exprdsl import parse
from integrable.flows import (
    BlowUpError,
    FlowAction,
    IntegrationError,
    commutation_residual,
    completeness_probe,
    flow_compose,
    integrate,
    sample_orbit,
    trajectory,
    write_trajectory_csv,
)
from integrable.symplectic import VectorField, coordinate_field, hamiltonian_field

from oracles import oscillator_flow

PQ = ("p", "q")
OSC = hamiltonian_field(parse("(p^2+q^2)/2", PQ))
R4 = ("p1", "p2", "q1", "q2")


def test_oscillator_returns_after_one_period():
    end = integrate(OSC, [1.0, 0.0], 2 * np.pi)
    assert np.linalg.norm(end - [1.0, 0.0]) < 1e-8


def test_momentum_field_translates_position():
    end = integrate(hamiltonian_field(parse("p", PQ)), [1.0, 0.0], 3.0)
    assert np.allclose(end, [1.0, -3.0], atol=1e-12)


def test_composed_pair_returns():
    fields = [hamiltonian_field(parse(s, R4)) for s in ("(p1^2+q1^2)/2", "(p2^2+q2^2)/2")]
    action = FlowAction(fields, [1.0, 0.5, 0.0, 0.2])
    assert np.linalg.norm(action([2 * np.pi, 2 * np.pi]) - action.base) < 1e-7


def test_noncommuting_fields_have_residual_one():
    dx = coordinate_field(2, 0)
    xdy = VectorField.parse(["0", "x"], ("x", "y"))
    assert commutation_residual(dx, xdy, [0.0, 0.0], 1.0, 1.0) == pytest.approx(1.0, abs=1e-10)


def test_blowup_detected_near_one():
    X = VectorField.parse(["x^2"], ("x",))
    with pytest.raises(BlowUpError) as info:
        integrate(X, [1.0], 2.0)
    assert 0.9 < info.value.t <= 1.0


def test_completeness_probe_reports_blowup():
    X = VectorField.parse(["x^2"], ("x",))
    (v,) = completeness_probe(X, [[1.0]], horizon=5)
    assert not v.ok and v.status == "blowup-detected"
    (w,) = completeness_probe(OSC, [[1.0, 0.0]], horizon=5)
    assert w.ok and w.heuristic


def test_energy_drift_over_long_time():
    end = integrate(OSC, [0.3, -1.2], 100.0)
    e0 = (0.3**2 + 1.2**2) / 2
    assert abs((end @ end) / 2 - e0) < 1e-6


def test_against_closed_form(rng):
    for _ in range(5):
        p0, q0 = rng.uniform(-2, 2, 2)
        t = rng.uniform(-10, 10)
        assert np.allclose(integrate(OSC, [p0, q0], t), oscillator_flow(p0, q0, t), atol=1e-8)


def test_batch_equals_single(rng):
    starts = rng.uniform(-1, 1, (2, 4))
    batch = integrate(OSC, starts, 1.7)
    for i in range(4):
        assert np.allclose(batch[:, i], oscillator_flow(*starts[:, i], 1.7), atol=1e-8)


def test_t_eval_exact_times():
    times = np.linspace(0, 2.0, 9)
    traj = trajectory(OSC, [1.0, 0.0], 2.0, t_eval=times)
    assert np.array_equal(traj.t, times)
    for t, s in zip(times, traj.states):
        assert np.allclose(s, oscillator_flow(1.0, 0.0, t), atol=1e-9)


def test_sample_orbit_closes():
    pts = sample_orbit(OSC, [0.0, 1.0], 2 * np.pi, 64)
    assert pts.shape == (65, 2)
    assert np.linalg.norm(pts[-1] - pts[0]) < 1e-9


def test_horizon_enforced():
    with pytest.raises(ValueError):
        integrate(OSC, [1.0, 0.0], 200.0, horizon=100.0)


def test_leg_reported_on_failure():
    X = VectorField.parse(["0", "x^2"], ("y", "x"))
    action = FlowAction([coordinate_field(2, 0), X], [0.0, 1.0])
    with pytest.raises(IntegrationError) as info:
        action([1.0, 3.0])
    assert info.value.leg == 1


def test_csv_stream():
    buf = io.StringIO()
    write_trajectory_csv(buf, trajectory(OSC, [1.0, 0.0], 0.5))
    rows = buf.getvalue().splitlines()
    assert rows[0] == "t,x1,x2"
    assert float(rows[1].split(",")[0]) == 0.0


@given(st.floats(-3, 3), st.floats(-3, 3), st.floats(-1, 1), st.floats(-1, 1))
def test_commuting_legs_in_any_order(t1, t2, a, b):
    fields = [hamiltonian_field(parse(s, R4)) for s in ("(p1^2+p2^2+q1^2+q2^2)/2", "p1*q2 - p2*q1")]
    base = np.array([a, b, 0.3, -0.4])
    fwd = flow_compose(FlowAction(fields, base), [t1, t2])
    rev = flow_compose(FlowAction(fields[::-1], base), [t2, t1])
    assert np.linalg.norm(fwd - rev) < 1e-6


@given(st.floats(-3, 3), st.floats(-3, 3))
def test_group_law(s, t):
    z = np.array([0.7, -0.2])
    assert np.allclose(integrate(OSC, integrate(OSC, z, s), t), integrate(OSC, z, s + t), atol=1e-8)
