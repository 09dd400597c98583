import numpy as np
import pytest
from hypothesis import given, strategies as st

from integrable.exprdsl import (
    Call,
    ExprSyntaxError,
    JetDomainError,
    UnknownIdentifierError,
    compose,
    eval_jet2,
    evaluate,
    parse,
)

from oracles import fd_gradient, fd_hessian, random_polynomial

COORDS = ("x", "y")

# random well-defined expressions over x, y
leaves = st.sampled_from(["x", "y", "1.5", "0.25", "2"])


def _combine(children):
    binary = st.tuples(children, st.sampled_from(["+", "-", "*"]), children).map(lambda t: f"({t[0]} {t[1]} {t[2]})")
    unary = st.tuples(st.sampled_from(["sin", "cos", "exp", "-"]), children).map(
        lambda t: f"-({t[1]})" if t[0] == "-" else f"{t[0]}(({t[1]})/4)"
    )
    power = children.map(lambda c: f"({c})^2")
    return binary | unary | power


expressions = st.recursive(leaves, _combine, max_leaves=8)
points = st.tuples(st.floats(-1.5, 1.5), st.floats(-1.5, 1.5))


def test_depth_of_quadratic():
    assert parse("(p^2+q^2)/2", ["p", "q"]).depth() == 4


def test_syntax_error_offset():
    with pytest.raises(ExprSyntaxError) as info:
        parse("2*", ["x"])
    assert info.value.offset == 2


def test_unknown_identifier():
    with pytest.raises(UnknownIdentifierError) as info:
        parse("x + z", ["x", "y"])
    assert info.value.name == "z"
    assert info.value.offset == 4


def test_one_call_node():
    assert parse("x*sin(y)", COORDS).count(Call) == 1


def test_square_jet():
    j = eval_jet2(parse("q^2", ["q"]), [3.0])
    assert j.value == 9.0
    assert j.gradient.tolist() == [6.0]
    assert j.hessian.tolist() == [[2.0]]


def test_sine_jet_at_zero():
    j = eval_jet2(parse("sin(q)", ["q"]), [0.0])
    assert (j.value, j.gradient.tolist(), j.hessian.tolist()) == (0.0, [1.0], [[0.0]])


def test_constant_has_zero_derivatives():
    j = eval_jet2(parse("3.5", COORDS), [0.3, -2.0])
    assert j.value == 3.5
    assert not j.gradient.any() and not j.hessian.any()


@pytest.mark.parametrize("src, point", [("log(x)", [-1.0, 0.0]), ("sqrt(x - y)", [0.0, 1.0]), ("atan2(x, y)", [0.0, 0.0])])
def test_domain_errors_name_the_subexpression(src, point):
    with pytest.raises(JetDomainError) as info:
        eval_jet2(parse(src, COORDS), point)
    assert info.value.subexpression


def test_sqrt_at_zero_value_only():
    e = parse("sqrt(x)", COORDS)
    assert evaluate(e, np.array([0.0, 1.0]), order=0)[0] == 0.0
    with pytest.raises(JetDomainError):
        eval_jet2(e, [0.0, 1.0])


def test_batch_matches_pointwise(rng):
    e = parse("x*sin(y) + exp(x*y)/3 + atan2(y, 2 + x)", COORDS)
    pts = rng.uniform(-1, 1, size=(2, 7))
    v, g, H = evaluate(e, pts)
    for i in range(7):
        j = eval_jet2(e, pts[:, i])
        assert np.isclose(v[i], j.value, rtol=0, atol=1e-15)
        assert np.allclose(g[:, i], j.gradient, rtol=0, atol=1e-15)
        assert np.allclose(H[:, :, i], j.hessian, rtol=0, atol=1e-15)


def test_random_polynomials_match_closed_form(rng):
    names = ["a", "b", "c"]
    for _ in range(20):
        src, f = random_polynomial(rng, names, degree=4)
        e = parse(src, names)
        z = rng.uniform(-1, 1, 3)
        j = eval_jet2(e, z)
        assert np.isclose(j.value, f(z), rtol=1e-12, atol=1e-12)
        assert np.allclose(j.gradient, fd_gradient(f, z), rtol=1e-6, atol=1e-7)
        assert np.allclose(j.hessian, fd_hessian(f, z), rtol=1e-4, atol=1e-5)


def test_compose_substitutes():
    C = parse("a^2 + b", ["a", "b"])
    F = [parse("x + y", COORDS), parse("x*y", COORDS)]
    G = compose(C, F)
    assert G.coords == COORDS
    assert np.isclose(G([1.0, 2.0]), 11.0)


@given(expressions, points)
def test_jet_agrees_with_finite_differences(src, pt):
    e = parse(src, COORDS)
    z = np.array(pt)
    j = eval_jet2(e, z)
    f = lambda w: evaluate(e, w, order=0)[0]
    g = fd_gradient(f, z, h=1e-6)
    scale = 1 + np.max(np.abs(g))
    assert np.max(np.abs(j.gradient - g)) <= 1e-6 * scale
    assert np.allclose(j.hessian, j.hessian.T)


@given(expressions, points)
def test_round_trip(src, pt):
    e = parse(src, COORDS)
    again = parse(str(e), COORDS)
    assert str(again) == str(e)
    assert again(pt) == pytest.approx(e(pt), rel=1e-14, abs=1e-14)


@given(st.text(alphabet="xy+-*/^()., 0123456789sin", max_size=12))
def test_parser_never_crashes_uncontrolled(src):
    try:
        parse(src, COORDS)
    except (ExprSyntaxError, UnknownIdentifierError):
        pass
