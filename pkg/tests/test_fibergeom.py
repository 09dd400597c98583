import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from integrable.exprdsl import parse
from integrable.fibergeom import (
    ActionAngleChart,
    CoordinateChart,
    FiberType,
    GridDegeneracyError,
    OpenLoopError,
    PeriodLattice,
    action_integral,
    classify_fiber,
    cycle_loop,
    darboux_residual,
    detect_lattice,
    newton_return,
    reduce_lattice,
)
from integrable.flows import FlowAction
from integrable.symplectic import hamiltonian_field

from oracles import oscillator_action_dense

PQ = ("p1", "q1")
R4 = ("p1", "p2", "q1", "q2")
OSC = parse("(p1^2+q1^2)/2", PQ)
TWO_OSC = [parse("(p1^2+q1^2)/2", R4), parse("(p2^2+q2^2)/2", R4)]
CYLINDER = [parse("(p1^2+p2^2)/2", R4), parse("q1*p2 - q2*p1", R4)]


def _action(funcs, base, tol=1e-10):
    return FlowAction([hamiltonian_field(f) for f in funcs], base, tol)


def _oscillator_chart():
    lat = detect_lattice(_action([OSC], [0.0, 1.0]), radius=8, step=0.05)
    return ActionAngleChart([OSC], lambda x: np.array([0.0, np.sqrt(2 * x[0])]), lat)


def test_oscillator_lattice_is_two_pi():
    lat = detect_lattice(_action([OSC], [0.0, 1.0]), radius=10, step=0.05)
    assert lat.h == 1
    assert abs(lat.basis[0, 0] - 2 * np.pi) < 1e-8
    assert classify_fiber(lat).label == "T^1"


def test_free_particle_has_no_returns():
    lat = detect_lattice(_action([parse("p1^2/2", PQ)], [1.0, 0.0]), radius=10, step=0.05)
    assert lat.h == 0
    assert lat.note == "no returns found in box"
    assert classify_fiber(lat).label == "R^1"


def test_cylinder_has_one_cycle():
    lat = detect_lattice(_action(CYLINDER, [1.0, 0.0, 0.0, 1.0]), radius=8, step=0.1)
    assert lat.h == 1
    assert lat.contains([0.0, 2 * np.pi])
    assert classify_fiber(lat).label == "R^1 x T^1"


def test_two_oscillators_torus():
    lat = detect_lattice(_action(TWO_OSC, [0.0, 0.0, 1.0, 1.0]), radius=7, step=0.1)
    expected = PeriodLattice(2, 2 * np.pi * np.eye(2), np.zeros(2), 0, 0)
    assert lat.same_lattice(expected, 1e-8)
    assert classify_fiber(lat).compact


def test_fiber_labels():
    assert FiberType(2, 0).label == "R^2"
    assert FiberType(1, 1).label == "T^1"
    assert FiberType(3, 2).label == "R^1 x T^2"


def test_newton_improves_rough_guess():
    t, res = newton_return(_action([OSC], [0.0, 1.0]), [6.2])
    assert abs(t[0] - 2 * np.pi) < 1e-9 and res < 1e-10


def test_reduce_lattice_merges_rational_dependence():
    # 2 and 3 generate the integer lattice
    basis = reduce_lattice([[2.0], [3.0]])
    assert basis.tolist() == [[1.0]]


@given(st.integers(-3, 3), st.integers(-3, 3), st.integers(-3, 3))
def test_reduce_lattice_invariant_under_unimodular_change(a, b, c):
    B = np.array([[2.0, 0.3], [0.5, 1.7]])
    U = np.array([[1, a], [0, 1]]) @ np.array([[1, 0], [b, 1]]) @ np.array([[1, c], [0, 1]])
    gens = list(U @ B) + [float(a) * B[0] + B[1]]
    R = reduce_lattice(gens)
    lat = PeriodLattice(2, R, np.zeros(2), 0, 0)
    assert lat.same_lattice(PeriodLattice(2, B, np.zeros(2), 0, 0), 1e-9)
    assert abs(abs(np.linalg.det(R)) - abs(np.linalg.det(B))) < 1e-9


@settings(max_examples=4)
@given(st.floats(0.0, 2 * np.pi), st.floats(0.0, 2 * np.pi))
def test_lattice_independent_of_base_on_fiber(s, t):
    action = _action(TWO_OSC, [0.0, 0.0, 1.0, 1.0])
    moved = action.with_base(action([s, t]))
    lat = detect_lattice(moved, radius=7, step=0.1)
    assert lat.same_lattice(PeriodLattice(2, 2 * np.pi * np.eye(2), np.zeros(2), 0, 0), 1e-8)


@pytest.mark.parametrize("E", [0.5, 1.0, 2.5])
def test_oscillator_action_equals_energy(E):
    base = [0.0, np.sqrt(2 * E)]
    loop = cycle_loop(_action([OSC], base, 1e-12), [2 * np.pi], nodes=256)
    value = action_integral(loop)
    assert abs(value - oscillator_action_dense(E)) < 1e-6
    assert abs(value - E) < 1e-6


def test_dense_oracle_is_exact_on_circle():
    assert abs(oscillator_action_dense(1.3) - 1.3) < 1e-12


def test_open_loop_rejected():
    with pytest.raises(OpenLoopError):
        action_integral(np.array([[0.0, 1.0], [1.0, 0.0], [0.5, 0.5]]))


def test_single_point_loop_has_zero_action():
    assert action_integral(np.array([[0.3, 0.4]])) == 0.0


def test_darboux_of_linear_symplectic_map():
    S = np.array([[2.0, 0.0], [0.0, 0.5]])  # det 1 on R^2 is symplectic
    chart = CoordinateChart(lambda z: S @ z, [False, False])
    assert darboux_residual(chart, [[0.1, 0.2], [1.0, -1.0]]) < 1e-12
    bad = CoordinateChart(lambda z: 2 * z, [False, False])
    assert darboux_residual(bad, [[0.1, 0.2]]) > 1


def test_darboux_singular_jacobian():
    chart = CoordinateChart(lambda z: np.array([z[0], 0.0 * z[1]]), [False, False])
    with pytest.raises(GridDegeneracyError):
        darboux_residual(chart, [[0.1, 0.2]])


def test_oscillator_chart_coordinates_and_darboux(rng):
    chart = _oscillator_chart()
    w = chart.coordinates([0.0, 1.0])
    assert abs(w[0] - 0.5) < 1e-7 and abs(w[1]) < 1e-7
    # a quarter period forward along X_H moves the angle by -pi/2
    z = np.array([np.sin(0.5), np.cos(0.5)])  # Phi_H(0.5) of (0, 1)
    assert abs(chart.coordinates(z)[1] + 0.5) < 1e-7
    pts = [[0.3, 1.1], [-0.9, 0.4]]
    assert darboux_residual(chart, pts, step=1e-3) < 1e-4
