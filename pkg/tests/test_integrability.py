import numpy as np
import pytest
from hypothesis import given, strategies as st

from integrable.exprdsl import parse
from integrable.integrability import (
    CoinducedStructure,
    RankDropWarning,
    check_closure,
    check_involution,
    derived_field_mismatch,
    derived_fields,
    fiber_partners,
    function_values,
    numeric_rank,
    pairwise_commutation_of_derived,
    sample_box,
    verify_casimirs,
)
from integrable.symplectic import hamiltonian_field

R4 = ("px", "py", "x", "y")
R6 = ("p1", "p2", "p3", "q1", "q2", "q3")
NAMES = ("H", "L1", "L2", "L3")
CENTRAL = [
    parse("(p1^2+p2^2+p3^2)/2 + (q1^2+q2^2+q3^2)/2 + (q1^2+q2^2+q3^2)^2/4", R6),
    parse("q2*p3 - q3*p2", R6),
    parse("q3*p1 - q1*p3", R6),
    parse("q1*p2 - q2*p1", R6),
]
SO3 = CoinducedStructure.from_entries(3, NAMES, {("L1", "L2"): "L3", ("L2", "L3"): "L1", ("L3", "L1"): "L2"})
BOX6 = [(-1, 1)] * 6


def _nc_verdict():
    return str(check_closure(CENTRAL, sample_box(BOX6, 10, 1), closure=SO3).verdict)


def test_single_momentum_is_partial(rng):
    rep = check_involution([parse("px", R4)], sample_box([(-1, 1)] * 4, 10, rng))
    assert str(rep.verdict) == "partial(1)"


def test_two_oscillators_complete(rng):
    F = [parse("(px^2+x^2)/2", R4), parse("(py^2+y^2)/2", R4)]
    rep = check_involution(F, sample_box([(-2, 2)] * 4, 30, rng))
    assert str(rep.verdict) == "complete(2)"
    assert rep.max_residual < 1e-12


def test_canonical_pair_fails_with_pair_named(rng):
    F = [parse("p", ("p", "q")), parse("q", ("p", "q"))]
    rep = check_involution(F, sample_box([(-1, 1)] * 2, 5, rng))
    assert rep.verdict.kind == "failed"
    assert rep.worst_pair == (1, 2)


def test_too_many_commuting_functions_fail(rng):
    # three commuting momenta on a 4-dimensional space cannot be independent
    F = [parse(s, R4) for s in ("px", "py", "px + py^2")]
    rep = check_involution(F, sample_box([(-1, 1)] * 4, 5, rng))
    assert rep.verdict.kind == "failed"


def test_dependent_differentials_fail(rng):
    F = [parse("px", R4), parse("2*px", R4)]
    rep = check_involution(F, sample_box([(-1, 1)] * 4, 5, rng))
    assert rep.verdict.kind == "failed" and "dependent" in rep.verdict.reason


def test_central_field_noncommutative():
    assert _nc_verdict() == "noncommutative(4, 2)"


def test_closure_residual_detects_non_closing_family(rng):
    F = [parse(s, R4) for s in ("px", "x*y", "py^2")]
    rep = check_closure(F, sample_box([(-1, 1)] * 4, 10, rng))
    assert rep.verdict.kind == "failed"
    assert rep.closure_residual > 1e-3


def test_fiber_partners_stay_on_fiber(rng):
    pts = sample_box(BOX6, 5, rng)
    partners = fiber_partners(CENTRAL, pts, rng=rng)
    assert np.max(np.abs(function_values(CENTRAL, partners) - function_values(CENTRAL, pts))) < 1e-12
    assert np.min(np.linalg.norm(partners - pts, axis=1)) > 0.01


def test_rank_drop_where_angular_momentum_vanishes():
    xs = np.array([[1.0, 0.0, 0.0, 0.0], [1.0, 0.5, 0.2, -0.1]])
    with pytest.warns(RankDropWarning):
        diags = SO3.check(xs)
    assert any("rank drop" in d for d in diags)


def test_casimirs_of_rotation_algebra(rng):
    C = [parse("H", NAMES), parse("L1^2 + L2^2 + L3^2", NAMES)]
    xs = function_values(CENTRAL, sample_box(BOX6, 20, rng))
    rep = verify_casimirs(SO3, C, xs)
    assert rep.passed(1e-12)


def test_constant_casimir_not_independent(rng):
    C = [parse("H", NAMES), parse("3", NAMES)]
    rep = verify_casimirs(SO3, C, function_values(CENTRAL, sample_box(BOX6, 5, rng)))
    assert rep.residual < 1e-14
    assert not rep.independent and rep.failures


def test_non_casimir_has_residual(rng):
    rep = verify_casimirs(SO3, [parse("L1", NAMES)], function_values(CENTRAL, sample_box(BOX6, 5, rng)))
    assert rep.residual > 1e-3


def test_coordinate_casimir_gives_original_field(rng):
    (X,) = derived_fields(SO3, [parse("L2", NAMES)], CENTRAL)
    direct = hamiltonian_field(CENTRAL[2])
    for z in sample_box(BOX6, 5, rng):
        assert np.allclose(X(z), direct(z), atol=1e-14)
        assert np.allclose(X.jacobian(z), direct.jacobian(z), atol=1e-14)


def test_derived_fields_match_composition_and_commute(rng):
    C = [parse("H", NAMES), parse("L1^2 + L2^2 + L3^2", NAMES)]
    fields = derived_fields(SO3, C, CENTRAL)
    pts = sample_box(BOX6, 10, rng)
    assert derived_field_mismatch(fields, C, CENTRAL, pts) < 1e-12
    assert pairwise_commutation_of_derived(fields, pts) < 1e-12


def test_corrupted_casimir_breaks_commutation(rng):
    C = [parse("H + L2", NAMES), parse("L1^2 + L2^2 + L3^2 + L1", NAMES)]
    pts = sample_box(BOX6, 10, rng)
    assert pairwise_commutation_of_derived(derived_fields(SO3, C, CENTRAL), pts) > 0.1


def test_sample_box_avoids_singular_set(rng):
    pts = sample_box([(-1, 1)] * 2, 50, rng, singular=[parse("p", ("p", "q"))], margin=0.05)
    assert np.all(np.abs(pts[:, 0]) > 0.05)


@given(st.lists(st.floats(-1e3, 1e3), min_size=4, max_size=4), st.integers(0, 2))
def test_numeric_rank_of_outer_products(v, r):
    v = np.array(v)
    if np.linalg.norm(v) < 1e-3:
        v = v + 1.0
    M = np.zeros((4, 4)) if r == 0 else sum(np.outer(np.roll(v, i), np.roll(v, -i)) for i in range(r))
    assert numeric_rank(M) <= r


@given(st.integers(0, 10_000))
def test_bracket_matrices_are_antisymmetric(seed):
    rep = check_involution(CENTRAL, sample_box(BOX6, 2, seed))
    assert np.allclose(rep.matrices, -np.swapaxes(rep.matrices, 1, 2), atol=0)
    assert rep.verdict.kind == "failed"  # k > n
