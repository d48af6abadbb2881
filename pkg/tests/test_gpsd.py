import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gpsdkit.exceptions import DiracFactor, InvalidSamplingTime, UnboundedSupport
from gpsdkit.gpsd import (
    ContinuousGpsd,
    DecayDensity,
    Psd1d,
    discretize,
    eval_continuous,
    exp_integral,
    kernel_from_discrete_gpsd,
    kernel_from_gpsd_quadrature,
    total_power,
)

SHAPES = ["laplacian", "cauchy", "gaussian"]


def make_psd(shape, beta=0.3, omega0=1.0, scale=1.0):
    return getattr(Psd1d, shape)(beta, omega0, scale)


# --- Psd1d -----------------------------------------------------------------


def test_laplacian_at_zero_peak_value():
    psd = Psd1d.laplacian_at_zero(0.1)
    assert psd(0.0) == pytest.approx(2.0 / (0.1 * math.pi), rel=1e-14)


def test_gaussian_peak_value():
    beta, om0, scale = 0.3, 0.7, 2.5
    psd = Psd1d.gaussian(beta, om0, scale)
    expected = scale / math.sqrt(2 * math.pi * beta) * (1 + math.exp(-2 * om0**2 / beta))
    assert psd(om0) == pytest.approx(expected, rel=1e-14)


@pytest.mark.parametrize("shape", SHAPES)
def test_mass_matches_quadrature(shape):
    psd = make_psd(shape, 0.4, 1.3, 1.7)
    num, _ = integrate.quad(psd, -np.inf, np.inf, limit=400, points=None)
    assert psd.mass() == pytest.approx(2 * 1.7, rel=1e-7)
    assert num == pytest.approx(psd.mass(), rel=1e-6)


@pytest.mark.parametrize("shape", SHAPES)
def test_lag_kernel_is_half_cosine_transform(shape):
    psd = make_psd(shape, 0.5, 0.8)
    num0, _ = integrate.quad(psd, 0, np.inf, limit=400)
    assert psd.lag_kernel(0.0) == pytest.approx(num0, abs=1e-7)
    for tau in (0.7, 3.0):
        # evenness turns 1/2 int over the line into the half-line Fourier integral
        num, _ = integrate.quad(psd, 0, np.inf, weight="cos", wvar=tau, limlst=200)
        assert psd.lag_kernel(tau) == pytest.approx(num, abs=1e-7)


def test_lag_kernel_closed_forms():
    tau = np.array([0.0, 0.5, 2.0])
    b, w0 = 0.3, 1.1
    np.testing.assert_allclose(Psd1d.laplacian(b, w0).lag_kernel(tau), np.exp(-b * tau) * np.cos(w0 * tau), rtol=1e-14)
    np.testing.assert_allclose(Psd1d.cauchy(b, w0).lag_kernel(tau), np.cos(w0 * tau) / (1 + b**2 * tau**2), rtol=1e-14)
    np.testing.assert_allclose(Psd1d.gaussian(b, w0).lag_kernel(tau), np.exp(-b * tau**2 / 2) * np.cos(w0 * tau),
                               rtol=1e-14)


def test_mixture_is_sum():
    a, b = Psd1d.laplacian(0.1, 0.0), Psd1d.laplacian(0.1, 2.0)
    mix = Psd1d.mixture([a, b])
    w = np.linspace(-4, 4, 17)
    np.testing.assert_allclose(mix(w), a(w) + b(w), rtol=1e-14)
    assert mix.mass() == pytest.approx(a.mass() + b.mass())


def test_tabulated_lag_kernel():
    grid = np.linspace(0, 5, 401)
    psd = Psd1d.tabulated(grid, np.exp(-grid))
    # 1/2 int_{-inf}^{inf} phi cos = int_0^5 e^-w cos(w tau) dw
    tau = 1.3
    num, _ = integrate.quad(lambda w: np.exp(-w) * np.cos(w * tau), 0, 5)
    assert psd.lag_kernel(tau) == pytest.approx(num, rel=1e-4)


@pytest.mark.parametrize("shape", SHAPES)
def test_folded_ppf_inverts_cdf(shape):
    psd = make_psd(shape, 0.2, 1.5)
    q = np.linspace(0.01, 0.99, 25)
    np.testing.assert_allclose(psd.folded_cdf(psd.folded_ppf(q)), q, atol=1e-12)


@pytest.mark.parametrize("shape", SHAPES)
def test_support_bracket_holds_tail(shape):
    psd = make_psd(shape, 0.2, 1.5)
    hi = psd.support_bracket(1e-10)
    assert psd.tail_mass(hi) <= 1e-10 * psd.mass() * 1.0001


def test_unbounded_support_raises():
    with pytest.raises(UnboundedSupport):
        # Lorentzian tail mass decays like 2 beta / (pi w): a wide one needs w > 1e15
        Psd1d.laplacian(1e6, 0.0).support_bracket(1e-10)


@pytest.mark.parametrize("shape", SHAPES)
def test_periodized_exact_fold_matches_lag_series(shape):
    psd = make_psd(shape, 0.3, 1.0)
    theta = np.linspace(-math.pi, math.pi, 9)
    lags = np.arange(1, 4000)
    series = (psd.lag_kernel(0.0) + 2 * np.cos(np.outer(theta, lags)) @ psd.lag_kernel(lags)) / math.pi
    tol = 1e-8 if shape != "cauchy" else 2e-3  # Cauchy lag series decays like 1/tau^2
    np.testing.assert_allclose(psd.periodized(theta, 1.0, None), series, atol=tol)


def test_exp_integral_limit_and_value():
    assert exp_integral(-1.0, -0.5, 0.0) == pytest.approx(0.5)
    assert exp_integral(-1.0, -0.5, 1e-14) == pytest.approx(0.5, rel=1e-12)
    assert exp_integral(-1.0, -0.5, 2.0) == pytest.approx((math.exp(-1.0) - math.exp(-2.0)) / 2, rel=1e-14)


# --- ContinuousGpsd --------------------------------------------------------


def test_eval_continuous_rejects_dirac():
    with pytest.raises(DiracFactor):
        eval_continuous(ContinuousGpsd.ecls(-0.1, Psd1d.laplacian(0.1)), -0.1, 0.0)


def test_eval_continuous_zero_outside_support():
    g = ContinuousGpsd.boxcar(-1.0, -0.5, Psd1d.laplacian(0.2))
    assert eval_continuous(g, -2.0, 0.3) == 0.0
    assert eval_continuous(g, -0.7, 0.3) == pytest.approx(Psd1d.laplacian(0.2)(0.3))


def test_boxcar_laplacian_at_zero_eval():
    g = ContinuousGpsd.boxcar(-1.0, -0.5, Psd1d.laplacian_at_zero(0.1))
    assert eval_continuous(g, -0.7, 0.0) == pytest.approx(2 / (0.1 * math.pi))


@pytest.mark.parametrize("shape", SHAPES)
def test_even_symmetry(shape):
    g = ContinuousGpsd.boxcar(-1.0, -0.2, make_psd(shape))
    w = np.linspace(0, 5, 11)
    np.testing.assert_array_equal(eval_continuous(g, -0.5, w), eval_continuous(g, -0.5, -w))


def test_ecls_quadrature_matches_closed_form():
    a0, beta = -0.2, 0.3
    g = ContinuousGpsd.ecls(a0, Psd1d.laplacian(beta, 0.0))
    for t, s in [(0.0, 0.0), (1.0, 2.5), (3.0, 0.5)]:
        expected = math.exp(a0 * (t + s)) * math.exp(-beta * abs(t - s))
        assert kernel_from_gpsd_quadrature(g, t, s) == pytest.approx(expected, abs=1e-8)


def test_warped_boxcar_is_integrated_tc():
    a_m, a_M = math.log(0.4), math.log(0.9)
    g = ContinuousGpsd.boxcar_warped(a_m / 2, a_M / 2, Psd1d.laplacian_at_zero(1.0))
    for t, s in [(1.0, 1.0), (2.0, 3.0), (0.5, 4.0)]:
        m = max(t, s)
        expected = (math.exp(a_M * m) - math.exp(a_m * m)) / (2 * m)
        assert kernel_from_gpsd_quadrature(g, t, s) == pytest.approx(expected, rel=1e-7)
        assert g.kernel(t, s) == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("family", ["stationary", "ecls", "boxcar", "separable"])
def test_zero_lag_equals_total_power(family):
    psd = Psd1d.cauchy(0.4, 1.0, 1.3)
    g = {
        "stationary": ContinuousGpsd.stationary(psd),
        "ecls": ContinuousGpsd.ecls(-0.3, psd),
        "boxcar": ContinuousGpsd.boxcar(-1.0, -0.1, psd),
        "separable": ContinuousGpsd.separable(psd, DecayDensity((-1.0, -0.5, 0.0), (0.0, 1.0, 0.5))),
    }[family]
    assert kernel_from_gpsd_quadrature(g, 0.0, 0.0) == pytest.approx(total_power(g), rel=1e-7)


@pytest.mark.parametrize("shape", SHAPES)
def test_quadrature_agrees_with_closed_form(shape):
    g = ContinuousGpsd.boxcar(-0.8, -0.1, make_psd(shape, 0.4, 0.9))
    for t, s in [(0.5, 1.5), (2.0, 2.0), (4.0, 1.0)]:
        assert kernel_from_gpsd_quadrature(g, t, s) == pytest.approx(float(g.kernel(t, s)), abs=1e-8)


def test_stationary_reduction():
    g = ContinuousGpsd.stationary(Psd1d.gaussian(0.5, 1.0))
    a = kernel_from_gpsd_quadrature(g, 1.0, 2.5)
    b = kernel_from_gpsd_quadrature(g, 4.0, 5.5)
    assert a == pytest.approx(b, abs=1e-9)


def test_total_power_of_unit_laplacian_at_zero():
    assert total_power(ContinuousGpsd.ecls(-0.1, Psd1d.laplacian_at_zero(0.1))) == pytest.approx(1.0)


def test_total_power_linear():
    psd_a, psd_b = Psd1d.laplacian_at_zero(0.1), Psd1d.laplacian(0.1, 2.0)
    ga = ContinuousGpsd.ecls(-0.1, psd_a)
    gm = ContinuousGpsd.ecls(-0.1, Psd1d.mixture([psd_a, psd_b]))
    assert total_power(ga.scaled(3.0)) == pytest.approx(3 * total_power(ga))
    assert total_power(gm) == pytest.approx(total_power(ga) + total_power(ContinuousGpsd.ecls(-0.1, psd_b)))


def test_config_round_trip():
    g = ContinuousGpsd.separable(Psd1d.mixture([Psd1d.laplacian(0.1), Psd1d.gaussian(0.2, 1.0)], [1.0, 2.0]),
                                 DecayDensity((-1.0, 0.0), (1.0, 1.0)))
    g2 = ContinuousGpsd.from_config(g.to_config())
    assert g2.to_config() == g.to_config()
    assert g2.kernel(1.0, 2.0) == pytest.approx(g.kernel(1.0, 2.0))


# --- DiscreteGpsd ----------------------------------------------------------


def test_discretize_rejects_bad_sampling_time():
    g = ContinuousGpsd.ecls(-0.1, Psd1d.laplacian(0.1))
    for T in (0.0, -1.0, float("nan")):
        with pytest.raises(InvalidSamplingTime):
            discretize(g, T)


def test_dirac_maps_to_circle():
    dg = discretize(ContinuousGpsd.ecls(-0.1, Psd1d.laplacian(0.1)), 1.0)
    assert dg.dirac_lambda == pytest.approx(math.exp(-0.1), rel=1e-15)
    with pytest.raises(DiracFactor):
        dg.eval(0.9, 0.0)


def test_band_limited_fold_terms_identical():
    grid = np.linspace(0, 3.0, 31)
    psd = Psd1d.tabulated(grid, np.cos(grid / 2))  # zero beyond 3 < pi
    g = ContinuousGpsd.boxcar(-1.0, -0.1, psd)
    th = np.linspace(-math.pi, math.pi, 13)
    a = discretize(g, 1.0, 0).eval(np.full(13, 0.8), th)
    b = discretize(g, 1.0, 3).eval(np.full(13, 0.8), th)
    np.testing.assert_array_equal(a, b)


def test_gaussian_periodization_brute_force():
    beta, om0, T = 0.1, 3 * math.pi / 5, 1.0
    psd = Psd1d.gaussian(beta, om0)
    dg = discretize(ContinuousGpsd.ecls(-0.1, psd), T, 2)
    theta = 3 * math.pi / 5
    expected = sum(
        (math.exp(-((theta - 2 * math.pi * k) / T - om0) ** 2 / (2 * beta))
         + math.exp(-((theta - 2 * math.pi * k) / T + om0) ** 2 / (2 * beta))) / math.sqrt(2 * math.pi * beta)
        for k in range(-2, 3)) / T
    assert dg.theta_density(theta) == pytest.approx(expected, rel=1e-12)


def test_discrete_even_in_theta():
    dg = discretize(ContinuousGpsd.boxcar(-1.0, -0.1, Psd1d.cauchy(0.3, 1.0)), 1.0, 3)
    th = np.linspace(0, math.pi, 7)
    lam = np.full(7, 0.6)
    np.testing.assert_allclose(dg.eval(lam, th), dg.eval(lam, -th), rtol=1e-14)


def test_dc_sampling_theorem_exact_fold():
    a0, beta = -0.1, 0.1
    g = ContinuousGpsd.ecls(a0, Psd1d.laplacian(beta, 0.0))
    dg = discretize(g, 1.0, None)
    for k, n in [(0, 0), (3, 7), (20, 12)]:
        exact = math.exp(a0 * (k + n) - beta * abs(k - n))
        assert kernel_from_discrete_gpsd(dg, k, n) == pytest.approx(exact, rel=1e-9)


def test_fold_truncation_bound_reports_loss():
    g = ContinuousGpsd.ecls(-0.1, Psd1d.laplacian(0.1, 0.0))
    dg = discretize(g, 1.0, 3)
    loss = total_power(g) - kernel_from_discrete_gpsd(dg, 0, 0)
    assert 0 < loss <= dg.truncation_bound() * 1.0001


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.05, 2.0), om0=st.floats(0.0, 3.0), shape=st.sampled_from(SHAPES),
       theta=st.floats(-math.pi, math.pi))
def test_periodized_nonnegative_and_even(beta, om0, shape, theta):
    psd = make_psd(shape, beta, om0)
    v = psd.periodized(np.array([theta, -theta]), 1.0, 3)
    assert v[0] >= 0
    assert v[0] == pytest.approx(v[1], rel=1e-12, abs=1e-300)


@settings(max_examples=30, deadline=None)
@given(beta=st.floats(0.05, 2.0), om0=st.floats(0.0, 3.0), shape=st.sampled_from(SHAPES),
       t=st.floats(0.0, 10.0), s=st.floats(0.0, 10.0))
def test_boxcar_kernel_symmetric_and_bounded(beta, om0, shape, t, s):
    g = ContinuousGpsd.boxcar(-1.0, -0.05, make_psd(shape, beta, om0))
    k_ts, k_st = float(g.kernel(t, s)), float(g.kernel(s, t))
    assert k_ts == k_st
    assert abs(k_ts) <= math.sqrt(float(g.kernel(t, t)) * float(g.kernel(s, s))) * (1 + 1e-9) + 1e-300
