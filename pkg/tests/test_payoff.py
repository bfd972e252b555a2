import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from bailout.payoff import PayoffFunction, phi1, phi2, segment_exp_integral

from conftest import concave_payoff


@pytest.mark.parametrize("z", [-30.0, -2.0, -1e-4, 0.0, 1e-9, 0.5, 8.0])
def test_phi_helpers_against_quadrature(z):
    # phi1(z) = int_0^1 e^{zu} du, phi2(z) = int_0^1 (1-u) e^{zu} du
    p1, _ = integrate.quad(lambda u: np.exp(z * u), 0, 1, epsabs=0, epsrel=1e-13)
    p2, _ = integrate.quad(lambda u: (1 - u) * np.exp(z * u), 0, 1, epsabs=0, epsrel=1e-13)
    assert float(phi1(np.array(z))) == pytest.approx(p1, rel=1e-13)
    assert float(phi2(np.array(z))) == pytest.approx(p2, rel=1e-12)


def test_segment_integral():
    assert float(segment_exp_integral(-0.7, 0.5, 2.0)) == pytest.approx((np.exp(-1.4) - np.exp(-0.35)) / -0.7, rel=1e-14)


def test_evaluation_and_extension():
    w = concave_payoff()
    assert w(1.5) == pytest.approx(1.55)
    assert w(6.0) == pytest.approx(2.5 + 0.2 * 2.0)
    assert w(-0.5) == pytest.approx(-0.6)
    np.testing.assert_allclose(w.slopes, [1.2, 0.7, 0.3, 0.2])
    assert w.right_derivative(1.0) == pytest.approx(0.7)
    assert w.right_derivative(10.0) == pytest.approx(0.2)


def test_class_membership():
    w = concave_payoff()
    assert w.concavity_violation() == 0.0
    assert w.class_violation(1.5) == 0.0
    assert w.class_violation(1.0) == pytest.approx(0.2)
    bent = PayoffFunction(np.array([0.0, 1.0, 2.0]), np.array([0.0, 0.5, 1.4]), 0.0)
    assert bent.concavity_violation() == pytest.approx(0.4)


def test_projection_is_least_concave_majorant():
    bent = PayoffFunction(np.array([0.0, 1.0, 2.0, 3.0]), np.array([0.0, 0.5, 1.4, 1.6]), 0.5)
    p = bent.project(1.5)
    np.testing.assert_allclose(p.values, [0.0, 0.7, 1.4, 1.6])
    assert p.tail_slope == pytest.approx(0.2)
    assert p.class_violation(1.5) == 0.0
    assert np.all(p.values >= bent.values - 1e-15)


def test_projection_is_identity_on_class_members():
    w = concave_payoff()
    p = w.project(1.5)
    np.testing.assert_allclose(p.values, w.values, atol=1e-15)
    assert p.tail_slope == w.tail_slope


@st.composite
def payoffs(draw):
    n = draw(st.integers(2, 8))
    gaps = draw(st.lists(st.floats(0.05, 2.0), min_size=n - 1, max_size=n - 1))
    vals = draw(st.lists(st.floats(-2.0, 2.0), min_size=n, max_size=n))
    tail = draw(st.floats(-0.5, 1.5))
    return PayoffFunction(np.concatenate([[0.0], np.cumsum(gaps)]), np.array(vals), tail)


@settings(max_examples=100, deadline=None)
@given(w=payoffs(), beta=st.floats(1.01, 3.0))
def test_projection_lands_in_class(w, beta):
    assert w.project(beta).class_violation(beta) <= 1e-12


@settings(max_examples=60, deadline=None)
@given(w=payoffs(), kappa=st.floats(-3.0, -0.05), lo=st.floats(0.0, 3.0), span=st.floats(0.0, 6.0))
def test_slope_integral_matches_quadrature(w, kappa, lo, span):
    hi = lo + span
    pts = [k for k in w.knots if lo < k < hi]
    val, _ = integrate.quad(lambda z: float(w.right_derivative(z)) * np.exp(kappa * z), lo, hi, points=pts or None, limit=200, epsabs=1e-13)
    assert float(w.slope_exp_integral(kappa, lo, hi)) == pytest.approx(val, abs=1e-10)


def test_slope_integral_to_infinity():
    w = concave_payoff()
    kappa = -1.3
    direct = float(w.slope_exp_integral(kappa, 0.0, 4.0)) + 0.2 * np.exp(kappa * 4.0) / 1.3
    assert float(w.slope_exp_integral(kappa, 0.0, np.inf)) == pytest.approx(direct, rel=1e-14)
    with pytest.raises(ValueError):
        w.slope_exp_integral(0.5, 0.0, np.inf)


def test_constructor_checks():
    with pytest.raises(ValueError):
        PayoffFunction(np.array([0.5, 1.0]), np.array([0.0, 1.0]))
    with pytest.raises(ValueError):
        PayoffFunction(np.array([0.0, 0.0]), np.array([0.0, 1.0]))
