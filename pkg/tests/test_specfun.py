import math

import mpmath as mp
import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import integrate, special
from scipy.integrate import solve_ivp
from scipy.optimize import brentq

from cograte.specfun import (NumericalError, TracyWidomTable,
                             exp_integral_ei, integrate_semiinf, q_function,
                             scaled_exp1, tw2_cdf, tw2_cdf_fredholm, tw2_ppf)

mp.mp.dps = 40


# --- Tracy-Widom oracle via the Hastings-McLeod solution of Painleve II ----

def _painleve_tw2(s_min=-6.0, s0=8.0):
    """F2 from q'' = s q + 2 q^3, q ~ Ai at +inf; ln F2' = R, R' = -q^2.

    Independent of the Airy-kernel determinant used to build the table.
    """
    ai0, aip0, _, _ = special.airy(s0)
    R0 = integrate.quad(lambda x: special.airy(x)[0] ** 2, s0, np.inf,
                        epsabs=0, epsrel=1e-13)[0]
    L0 = -integrate.quad(lambda x: (x - s0) * special.airy(x)[0] ** 2, s0,
                         np.inf, epsabs=0, epsrel=1e-13)[0]

    def rhs(s, y):
        q, dq, L, R = y
        return [dq, s * q + 2 * q ** 3, R, -q * q]

    sol = solve_ivp(rhs, (s0, s_min), [ai0, aip0, L0, R0], method="DOP853",
                    rtol=1e-13, atol=1e-16, dense_output=True)
    return lambda s: math.exp(sol.sol(s)[2])


@pytest.fixture(scope="module")
def tw2_oracle():
    return _painleve_tw2()


def test_tw2_tails_clamp():
    assert tw2_cdf(-10.0) <= 1e-8
    assert tw2_cdf(6.0) >= 1 - 1e-8
    assert tw2_cdf(-50.0) == 0.0 or tw2_cdf(-50.0) <= 1e-8
    assert tw2_cdf(50.0) >= 1 - 1e-8


@pytest.mark.parametrize("p", [0.5, 0.95])
def test_tw2_quantiles_match_painleve_route(tw2_oracle, p):
    s_ref = brentq(lambda s: tw2_oracle(s) - p, -5.0, 3.0, xtol=1e-12)
    assert tw2_ppf(p) == pytest.approx(s_ref, abs=1e-4)


@given(st.floats(-5.5, 3.0))
@settings(max_examples=25, deadline=None)
def test_tw2_table_matches_painleve_route(s):
    oracle = _tw2_oracle_cached()
    assert tw2_cdf(s) == pytest.approx(oracle(s), abs=1e-6)


_ORACLE = []


def _tw2_oracle_cached():
    if not _ORACLE:
        _ORACLE.append(_painleve_tw2())
    return _ORACLE[0]


def test_tw2_published_moments():
    # mean -1.7710868074, variance 0.8131947928 (beta = 2)
    tab = TracyWidomTable.load()
    s = np.linspace(-10, 6, 16001)
    f = tab.pdf(s)
    mean = integrate.simpson(s * f, x=s)
    var = integrate.simpson((s - mean) ** 2 * f, x=s)
    assert mean == pytest.approx(-1.7710868074, abs=2e-6)
    assert var == pytest.approx(0.8131947928, abs=2e-6)


def test_fredholm_route_agrees_with_table():
    for s in (-4.0, -2.5, -1.0, 0.3, 2.0):
        assert tw2_cdf_fredholm(s) == pytest.approx(tw2_cdf(s), abs=1e-9)


def test_tw2_nan_rejected():
    with pytest.raises(ValueError):
        tw2_cdf(float("nan"))


# --- Gaussian tail ----------------------------------------------------------

def test_q_basic_values():
    assert q_function(0.0) == 0.5
    assert q_function(40.0) == pytest.approx(0.0, abs=1e-300)
    assert q_function(np.inf) == 0.0


@pytest.mark.parametrize("x", [-6.0, -1.3, 0.2, 1.0363, 3.7, 9.0])
def test_q_against_mpmath(x):
    ref = float(mp.erfc(mp.mpf(x) / mp.sqrt(2)) / 2)
    assert q_function(x) == pytest.approx(ref, rel=1e-12)


def test_q_against_density_quadrature():
    x = 1.0363
    val = integrate.quad(lambda t: math.exp(-t * t / 2) / math.sqrt(2 * math.pi),
                         x, np.inf, epsabs=1e-15, epsrel=1e-12)[0]
    assert q_function(x) == pytest.approx(val, abs=1e-12)


def test_q_nan_rejected():
    with pytest.raises(ValueError):
        q_function(float("nan"))


# --- exponential integrals -----------------------------------------------------

def test_ei_at_minus_one():
    assert exp_integral_ei(-1.0) == pytest.approx(-0.21938393439552027,
                                                  rel=1e-12)


@pytest.mark.parametrize("x", [-700.0, -50.0, -3.5, -1e-6, 1e-3, 0.7, 12.0,
                               80.0])
def test_ei_against_mpmath(x):
    assert exp_integral_ei(x) == pytest.approx(float(mp.ei(x)), rel=1e-12)


def test_ei_left_tail_decays_to_zero_from_below():
    v = exp_integral_ei(-700.0)
    assert v < 0 and abs(v) < 1e-300


def test_ei_singular_at_zero():
    with pytest.raises(ValueError):
        exp_integral_ei(0.0)


@given(st.floats(-30, 30).filter(lambda x: abs(x) > 0.05))
def test_ei_derivative_by_finite_differences(x):
    h = 1e-5 * max(1.0, abs(x))
    fd = (exp_integral_ei(x + h) - exp_integral_ei(x - h)) / (2 * h)
    assert fd == pytest.approx(math.exp(x) / x, rel=1e-6)


@pytest.mark.parametrize("z", [1e-8, 0.01, 1.0, 30.0, 599.0, 601.0, 5e3,
                               1e6])
def test_scaled_exp1_against_mpmath(z):
    ref = float(mp.exp(z) * mp.e1(z))
    assert scaled_exp1(z) == pytest.approx(ref, rel=1e-12)


def test_scaled_exp1_limits_and_domain():
    assert scaled_exp1(np.inf) == 0.0
    with pytest.raises(ValueError):
        scaled_exp1(0.0)


# --- semi-infinite quadrature -----------------------------------------------

def test_integrate_exponential():
    assert integrate_semiinf(lambda x: math.exp(-x), tol=1e-12) == \
        pytest.approx(1.0, rel=1e-12)


def test_integrate_log_against_ei_closed_form():
    # int_0^inf ln(1+x) e^-x dx = e E1(1) = -e Ei(-1)
    val = integrate_semiinf(lambda x: math.log1p(x) * math.exp(-x),
                            tol=1e-12)
    assert val == pytest.approx(-math.e * exp_integral_ei(-1.0), rel=1e-11)


@pytest.mark.parametrize("a", [0.01, 1.0, 37.0])
def test_integrate_exponential_mean(a):
    val = integrate_semiinf(lambda x: x * math.exp(-x / a) / a, tol=1e-12,
                            points=[a, 10 * a])
    assert val == pytest.approx(a, rel=1e-11)


def test_integrate_divergent_raises():
    with pytest.raises(NumericalError):
        integrate_semiinf(lambda x: 1.0 / (1.0 + x), tol=1e-10)
