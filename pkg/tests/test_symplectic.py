import numpy as np
import pytest
from hypothesis import given, strategies as st

from integrable.exprdsl import parse
from integrable.symplectic import (
    SymplecticChart,
    VectorField,
    bracket_matrix,
    coordinate_field,
    hamiltonian_field,
    lie_bracket,
    lie_derivative_oneform,
    poisson_bracket,
)

from oracles import fd_gradient

PQ = ("p", "q")
R4 = ("px", "py", "x", "y")
polys = st.sampled_from([
    "p^2*q", "p*q^3 - q", "sin(p) + q^2", "exp(q/3)*p", "p^3 + p*q", "cos(p*q)", "(p + 2*q)^2",
])
point = st.tuples(st.floats(-1, 1), st.floats(-1, 1)).map(np.array)


def test_hamiltonian_vector_of_oscillator():
    X = hamiltonian_field(parse("(p^2+q^2)/2", PQ))
    assert X([1.0, 0.0]).tolist() == [0.0, -1.0]


def test_field_of_momentum():
    assert hamiltonian_field(parse("p", PQ))([0.3, 0.7]).tolist() == [0.0, -1.0]


def test_constant_function_has_zero_field():
    assert not hamiltonian_field(parse("4", PQ))([0.3, 0.7]).any()


def test_canonical_bracket():
    assert poisson_bracket(parse("q", PQ), parse("p", PQ), [0.2, 0.5]) == 1.0


def test_flat_sharp_inverse(rng):
    chart = SymplecticChart(2)
    v = rng.standard_normal(4)
    assert np.allclose(chart.sharp(chart.flat(v)), v)


def test_field_contracts_to_differential(rng):
    # Omega(X_F, .) = dF, with dF from finite differences of plain numpy
    F = parse("p^2*q + sin(q)", PQ)
    f = lambda z: z[0] ** 2 * z[1] + np.sin(z[1])
    chart = SymplecticChart(1, PQ)
    for z in rng.uniform(-1, 1, (5, 2)):
        assert np.allclose(chart.flat(hamiltonian_field(F)(z)), fd_gradient(f, z), atol=1e-8)


def test_angular_momentum_commutes_with_isotropic_energy(rng):
    H = parse("(px^2+py^2)/2 + (x^2+y^2)/2", R4)
    L = parse("x*py - y*px", R4)
    for z in rng.uniform(-2, 2, (20, 4)):
        assert abs(poisson_bracket(H, L, z)) < 1e-14


def test_bracket_matrix_antisymmetric(rng):
    F = [parse(s, R4) for s in ("px*x", "py^2 + x", "x*y")]
    z = rng.standard_normal(4)
    B = bracket_matrix(F, z)
    assert np.allclose(B, -B.T)
    assert B[0, 1] == pytest.approx(poisson_bracket(F[0], F[1], z), abs=1e-14)


def test_lie_bracket_of_coordinate_fields():
    dx = coordinate_field(2, 0)
    xdy = VectorField.parse(["0", "x"], ("x", "y"))
    assert lie_bracket(dx, xdy, [0.4, -1.0]).tolist() == [0.0, 1.0]


def test_lie_derivative_of_dx_along_scaling():
    X = VectorField.parse(["x"], ("x",))
    assert lie_derivative_oneform(X, [parse("1", ("x",))], [2.5]).tolist() == [1.0]


W2 = SymplecticChart(1).omega


def _grad_bracket(G, H, z):
    """Exact gradient of {G, H} = grad H . W grad G from second-order jets."""
    g, h = G.jet(z), H.jet(z)
    return h.hessian @ W2 @ g.gradient + g.hessian @ W2.T @ h.gradient


@given(polys, polys, polys, point)
def test_jacobi_identity(a, b, c, z):
    F, G, H = (parse(s, PQ) for s in (a, b, c))

    def outer(A, B, C):
        return float(_grad_bracket(B, C, z) @ W2 @ A.jet(z).gradient)

    assert abs(outer(F, G, H) + outer(G, H, F) + outer(H, F, G)) < 1e-9


def test_bracket_gradient_against_differences(rng):
    G, H = parse("p^2*q", PQ), parse("sin(p) + q^3", PQ)
    z = rng.uniform(-1, 1, 2)
    fd = fd_gradient(lambda w: poisson_bracket(G, H, w), z)
    assert np.allclose(_grad_bracket(G, H, z), fd, atol=1e-8)


@given(polys, polys, polys, point)
def test_leibniz_rule(a, b, c, z):
    F, G, H = (parse(s, PQ) for s in (a, b, c))
    GH = parse(f"({b})*({c})", PQ)
    lhs = poisson_bracket(F, GH, z)
    rhs = poisson_bracket(F, G, z) * H(z) + G(z) * poisson_bracket(F, H, z)
    assert abs(lhs - rhs) < 1e-10 * (1 + abs(lhs))


@given(polys, polys, point)
def test_bracket_antisymmetry(a, b, z):
    F, G = parse(a, PQ), parse(b, PQ)
    assert poisson_bracket(F, G, z) == pytest.approx(-poisson_bracket(G, F, z), abs=1e-14)


@given(polys, polys, point)
def test_field_of_bracket_is_lie_bracket(a, b, z):
    # with {F,G} = X_F(G) Jacobi gives X_{{F,G}} = [X_F, X_G]; exact jets on both sides
    F, G = parse(a, PQ), parse(b, PQ)
    XF, XG = hamiltonian_field(F), hamiltonian_field(G)
    assert np.allclose(W2 @ _grad_bracket(F, G, z), lie_bracket(XF, XG, z), atol=1e-12)
