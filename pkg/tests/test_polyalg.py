import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from iforge.polyalg import Polynomial, lie_derivative, monomial_basis


def poly(vars_, terms):
    return Polynomial(vars_, terms)


def x(name="x", vars_=("x",)):
    return Polynomial.variable(name, vars_)


class TestMonomialBasis:
    def test_constant_basis(self):
        assert monomial_basis(("x",), 0) == [(0,)]

    def test_two_vars_degree_one(self):
        assert monomial_basis(("x", "y"), 1) == [(0, 0), (1, 0), (0, 1)]

    def test_four_vars_degree_two_count(self):
        assert len(monomial_basis(("x1", "x2", "x3", "x4"), 2)) == 15

    def test_grlex_order(self):
        basis = monomial_basis(("x", "y"), 2)
        degs = [sum(m) for m in basis]
        assert degs == sorted(degs)
        # within degree 2: x^2 before xy before y^2
        assert basis[3:] == [(2, 0), (1, 1), (0, 2)]

    def test_negative_degree_rejected(self):
        with pytest.raises(ValueError):
            monomial_basis(("x",), -1)


class TestArithmetic:
    def test_difference_of_squares(self):
        xx = x()
        assert ((xx + 1.0) * (xx - 1.0)).allclose(xx * xx - 1.0)

    def test_additive_identity(self):
        p = poly(("x", "y"), {(1, 0): 2.0, (0, 2): -1.0})
        assert (p + Polynomial.zero(("x", "y"))).allclose(p)

    def test_scale(self):
        xx = x()
        p = xx * xx + xx
        assert p.scale(2.0).allclose(2.0 * xx * xx + 2.0 * xx)

    def test_no_zero_coefficients_stored(self):
        xx = x()
        p = xx - xx
        assert p.terms == {}

    def test_union_space_merge(self):
        a = Polynomial.variable("x", ("x",))
        b = Polynomial.variable("y", ("y",))
        c = a * b
        assert set(c.variables) == {"x", "y"}
        assert c.evaluate({"x": 2.0, "y": 3.0}) == 6.0


class TestDifferentiate:
    def test_power_rule(self):
        p = poly(("x", "y"), {(2, 1): 1.0})  # x^2 y
        assert p.diff("x").allclose(poly(("x", "y"), {(1, 1): 2.0}))

    def test_constant(self):
        assert Polynomial.constant(("x",), 5.0).diff("x").is_zero()

    def test_quartic(self):
        xx = x()
        assert (xx ** 4).diff("x").allclose(4.0 * xx ** 3)


class TestLieDerivative:
    def test_rotation_conserves_radius(self):
        v = ("x1", "x2")
        x1, x2 = (Polynomial.variable(n, v) for n in v)
        h = x1 * x1 + x2 * x2
        out = lie_derivative(h, [x2, -1.0 * x1])
        assert out.is_zero()

    def test_scalar_decay(self):
        xx = x()
        assert lie_derivative(xx, [-1.0 * xx]).allclose(-1.0 * xx)

    def test_with_free_input_variable(self):
        v = ("x", "u")
        xx, uu = (Polynomial.variable(n, v) for n in v)
        h = 1.0 - xx * xx
        out = lie_derivative(h, [-1.0 * xx + uu], state_vars=("x",))
        assert out.allclose(2.0 * xx * xx - 2.0 * xx * uu)

    def test_dimension_mismatch(self):
        with pytest.raises(ValueError):
            lie_derivative(x(), [x(), x()], state_vars=("x",))


class TestEvaluate:
    def test_simple(self):
        xx = x()
        assert (xx * xx - 1.0).evaluate({"x": 2.0}) == pytest.approx(3.0)

    def test_glued_pieces_agree_at_boundary(self):
        # two parabola pieces meeting at x = sqrt(10)/2 with common value 2.5
        xx = x()
        h1 = -1.0 * xx * xx + 5.0
        h2 = -0.2 * xx * xx + 3.0
        at = math.sqrt(10.0) / 2.0
        assert h1.evaluate({"x": at}) == pytest.approx(2.5)
        assert h2.evaluate({"x": at}) == pytest.approx(2.5)

    def test_missing_assignment(self):
        with pytest.raises(KeyError):
            x().evaluate({})

    def test_evaluate_array_matches_scalar(self):
        rng = np.random.default_rng(0)
        p = poly(("x", "y"), {(2, 1): 1.5, (0, 3): -0.25, (1, 0): 2.0})
        xs = rng.normal(size=50)
        ys = rng.normal(size=50)
        arr = p.evaluate_array({"x": xs, "y": ys})
        for i in range(50):
            assert arr[i] == pytest.approx(p.evaluate({"x": xs[i], "y": ys[i]}))


coeff = st.floats(min_value=-5, max_value=5, allow_nan=False)
small_poly = st.dictionaries(
    st.tuples(st.integers(0, 3), st.integers(0, 3)), coeff, max_size=6,
).map(lambda terms: Polynomial(("x", "y"), terms))


class TestProperties:
    @settings(max_examples=60, deadline=None)
    @given(small_poly, small_poly)
    def test_product_rule(self, a, b):
        lhs = (a * b).diff("x")
        rhs = a * b.diff("x") + b * a.diff("x")
        assert lhs.max_coeff_diff(rhs) <= 1e-12 * (
            1.0 + max((abs(c) for c in lhs.terms.values()), default=1.0))

    @settings(max_examples=60, deadline=None)
    @given(small_poly, small_poly, st.floats(-2, 2), st.floats(-2, 2))
    def test_evaluation_homomorphism(self, a, b, px, py):
        pt = {"x": px, "y": py}
        va, vb = a.evaluate(pt), b.evaluate(pt)
        assert (a * b).evaluate(pt) == pytest.approx(va * vb, rel=1e-9, abs=1e-9)
        assert (a + b).evaluate(pt) == pytest.approx(va + vb, rel=1e-9, abs=1e-9)

    def test_eval_product_random_instances(self):
        rng = np.random.default_rng(7)
        for _ in range(25):
            a = poly(("x", "y"), {(int(rng.integers(0, 3)), int(rng.integers(0, 3))):
                                  float(rng.normal()) for _ in range(4)})
            b = poly(("x", "y"), {(int(rng.integers(0, 3)), int(rng.integers(0, 3))):
                                  float(rng.normal()) for _ in range(4)})
            pt = {"x": float(rng.normal()), "y": float(rng.normal())}
            assert (a * b).evaluate(pt) == pytest.approx(
                a.evaluate(pt) * b.evaluate(pt), rel=1e-9, abs=1e-9)

    def test_canonical_idempotent(self):
        p = poly(("x", "y"), {(1, 1): 0.5, (2, 0): -3.0})
        assert p.canonical().terms == p.terms


class TestSerialization:
    def test_round_trip_full_precision(self):
        rng = np.random.default_rng(3)
        terms = {(int(rng.integers(0, 4)), int(rng.integers(0, 4)), int(rng.integers(0, 4))):
                 float(rng.normal()) * 10 ** int(rng.integers(-8, 8)) for _ in range(12)}
        p = Polynomial(("a", "b", "c"), terms)
        q = Polynomial.from_text(p.to_text(), ("a", "b", "c"))
        assert q.terms == p.terms  # bitwise round trip through repr
