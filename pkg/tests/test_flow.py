import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from hllk.errors import DimensionError, FlowError
from hllk.expr import parse, random_polynomial
from hllk.flow import FlowMap, IntegratorConfig, PhaseState, advance, advance_points, \
    conservation_error, integrate, invert, jacobian_determinant, lagrangian_along

L3 = parse("q1*p2 - q2*p1", 3)
H = parse("(p1^2 + q1^2)/2", 1)


def rotate(x, y, a):
    return np.cos(a) * x - np.sin(a) * y, np.sin(a) * x + np.cos(a) * y


def test_l3_quarter_turn():
    end = advance(L3, PhaseState((1, 0, 0), (0, 1, 0)), np.pi / 2)
    np.testing.assert_allclose(end.q, (0, 1, 0), atol=1e-10)
    np.testing.assert_allclose(end.p, (-1, 0, 0), atol=1e-10)


def test_translation():
    end = advance(parse("p1", 1), PhaseState((0,), (5,)), 2.0)
    assert end.q == pytest.approx((2.0,)) and end.p == pytest.approx((5.0,))
    start = invert(parse("p1", 1), PhaseState((2,), (5,)), 2.0)
    assert start.q == pytest.approx((0.0,), abs=1e-12)


def test_harmonic_period_is_identity():
    rng = np.random.default_rng(1)
    y0 = rng.uniform(-2, 2, (2, 10))
    y = integrate(H, y0, 2 * np.pi)
    np.testing.assert_allclose(y, y0, atol=1e-10)


def test_harmonic_inverse_is_forward_by_the_complement():
    w = PhaseState((0.7,), (-1.1,))
    back = invert(H, w, np.pi)
    fwd = advance(H, w, np.pi)
    np.testing.assert_allclose(back.as_array(), fwd.as_array(), atol=1e-10)


def test_l3_random_starts_match_rotation():
    rng = np.random.default_rng(7)
    y0 = rng.uniform(-3, 3, (6, 20))
    alpha = rng.uniform(-3, 3, 20)
    y = integrate(L3, y0, alpha)
    q1, q2 = rotate(y0[0], y0[1], alpha)
    p1, p2 = rotate(y0[3], y0[4], alpha)
    exp = np.array([q1, q2, y0[2], p1, p2, y0[5]])
    assert np.max(np.abs(y - exp)) < 1e-8


def test_l3_inverse_roundtrip():
    w = PhaseState((0.3, -1.2, 0.5), (1.0, 0.4, -0.7))
    back = invert(L3, advance(L3, w, np.pi / 3), np.pi / 3)
    np.testing.assert_allclose(back.as_array(), w.as_array(), atol=1e-8)


def test_nonlinear_flow_closed_form():
    a = parse("q1^2*p1", 1)
    end = advance(a, PhaseState((1.0,), (1.0,)), 0.5)
    # dq/da = q^2, dp/da = -2 q p  =>  q = q0/(1 - a q0), p = p0 (1 - a q0)^2
    assert end.q[0] == pytest.approx(2.0, abs=1e-8)
    assert end.p[0] == pytest.approx(0.25, abs=1e-8)
    assert jacobian_determinant(a, PhaseState((1.0,), (1.0,)), 0.5) == pytest.approx(1.0, abs=1e-5)


@pytest.mark.parametrize("gen", ["q1*p2 - q2*p1", "p1", "q1^2*p1 + p2^3", "sin(q1)*p2 + q2^2*p1^2"])
def test_volume_preservation(gen):
    a = parse(gen, 2)
    w = PhaseState((0.3, -0.4), (0.2, 0.5))
    assert jacobian_determinant(a, w, 0.6) == pytest.approx(1.0, abs=1e-5)


@settings(max_examples=15, deadline=None)
@given(st.integers(0, 2 ** 32 - 1))
def test_random_generators_preserve_volume_and_value(seed):
    rng = np.random.default_rng(seed)
    a = random_polynomial(rng, 1, degree=3, terms=3, coeff_range=2)
    w = PhaseState(tuple(rng.uniform(-0.5, 0.5, 1)), tuple(rng.uniform(-0.5, 0.5, 1)))
    try:
        det = jacobian_determinant(a, w, 0.2)
        err = conservation_error(a, w, 0.2)
    except FlowError:
        return  # finite-time blow-up of a random polynomial flow
    assert det == pytest.approx(1.0, abs=1e-5)
    assert err < 1e-8


def test_group_law():
    a = parse("q1^2*p1 + p1^2/2", 1)
    w = PhaseState((0.4,), (0.3,))
    two = advance(a, advance(a, w, 0.3), 0.5)
    one = advance(a, w, 0.8)
    np.testing.assert_allclose(two.as_array(), one.as_array(), atol=1e-10)
    fm = FlowMap(a, 0.3)
    np.testing.assert_allclose(fm.then(FlowMap(a, 0.5))(w).as_array(), one.as_array(), atol=1e-12)
    np.testing.assert_allclose(fm.inverse()(fm(w)).as_array(), w.as_array(), atol=1e-10)


def test_second_order_scheme_converges_at_second_order():
    a = parse("p1^2/2 + q1^4/4", 1)
    w = PhaseState((1.0,), (0.0,))
    ref = advance(a, w, 1.0, IntegratorConfig(h=1e-4))
    errs = [np.max(np.abs(advance(a, w, 1.0, IntegratorConfig(h=h, order=2)).as_array()
                          - ref.as_array())) for h in (0.02, 0.01)]
    assert 3.5 < errs[0] / errs[1] < 4.5


def test_flowmap_apply_matches_advance_points():
    pts = np.random.default_rng(2).uniform(-1, 1, (5, 2))
    a = parse("q1*p1^2", 1)
    np.testing.assert_allclose(FlowMap(a, 0.3).apply(pts), advance_points(a, pts, 0.3), atol=1e-14)


def test_lagrangian_integral_for_free_motion():
    a = parse("p1^2/2", 1)
    pts = np.array([[0.0, 1.0], [2.0, -1.0]])
    y, s = lagrangian_along(a, pts, 3.0)
    # L_A = p^2/2 is constant along the flow
    np.testing.assert_allclose(s, [6.0, 1.5], rtol=1e-12)


def test_dimension_and_blow_up_errors():
    with pytest.raises(DimensionError):
        advance(L3, PhaseState((1.0,), (0.0,)), 1.0)
    with pytest.raises(FlowError):
        advance(parse("q1^3*p1", 1), PhaseState((2.0,), (1.0,)), 1.0, IntegratorConfig(h=1e-2))
    with pytest.raises(ValueError):
        PhaseState((float("nan"),), (0.0,))
