import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import integrate

from gpsdkit.exceptions import DomainMismatch, InvalidFilterPole, InvalidHyperParameter, TruncationInsufficient
from gpsdkit.gpsd import Psd1d
from gpsdkit.kernels import (
    DiscretePsd,
    HyperParams,
    KernelModel,
    Kind,
    ecls_decomposition,
    eval_kernel,
    filter_impulse,
    filtered_kernel,
    gram,
    kernel_to_gpsd,
    stationary_psd_discrete,
)

IDX = np.arange(1, 51)


def km(kind, **hyper):
    return KernelModel(kind, HyperParams(**hyper))


def test_itc_value():
    assert eval_kernel(km(Kind.ITC, lambda_m=0.4, lambda_M=0.9), 1, 1) == pytest.approx(0.25, rel=1e-14)


def test_itc_bar_value():
    assert eval_kernel(km(Kind.ITC_BAR, lambda_m=0.4, lambda_M=0.9), 1, 1) == pytest.approx(0.325, rel=1e-14)


def test_itc_riemann_oracle():
    k = km(Kind.ITC, lambda_m=0.4, lambda_M=0.9)
    a = np.linspace(math.log(0.4) / 2, math.log(0.9) / 2, 200001)
    for t, s in [(1, 3), (4, 2), (7, 7)]:
        m = max(t, s)
        riemann = np.trapezoid(np.exp(2 * a * m), a)
        assert eval_kernel(k, t, s) == pytest.approx(riemann, rel=1e-8)


def test_itc_limit_at_zero():
    k = km(Kind.ITC, lambda_m=0.4, lambda_M=0.9)
    assert eval_kernel(k, 0, 0) == pytest.approx((math.log(0.9) - math.log(0.4)) / 2, rel=1e-14)


def test_itc_bar_discrete_only():
    with pytest.raises(DomainMismatch):
        KernelModel(Kind.ITC_BAR, HyperParams(alpha_min=-1.0, alpha_max=-0.1), time_domain="continuous")


@pytest.mark.parametrize("kind", [Kind.STATIONARY_L, Kind.STATIONARY_C, Kind.STATIONARY_G])
def test_stationary_zero_lag_is_scale(kind):
    k = km(kind, beta=0.37, omega0=1.2, scale=2.5)
    np.testing.assert_allclose(np.diag(gram(k, IDX)), 2.5, rtol=1e-14)


def test_tc_value():
    assert eval_kernel(km(Kind.TC, gamma=0.5), 2, 3) == pytest.approx(math.exp(-1.5), rel=1e-14)


def test_tc_ecls_rewrite():
    k = km(Kind.TC, gamma=0.5)
    lam0, k1 = ecls_decomposition(k)
    for t, s in [(1, 1), (2, 5), (9, 3)]:
        assert eval_kernel(k, t, s) == pytest.approx(lam0 ** (t + s) * k1(t - s), rel=1e-13)


def test_ss_rewrite_exact():
    g = 0.3
    k = km(Kind.SS, gamma=g)
    T, S = np.meshgrid(IDX[:20], IDX[:20], indexing="ij")
    direct = np.exp(-1.5 * g * (T + S)) * (np.exp(-0.5 * g * abs(T - S)) / 2 - np.exp(-1.5 * g * abs(T - S)) / 6)
    np.testing.assert_allclose(gram(k, IDX[:20]), direct, rtol=1e-12)


@pytest.mark.parametrize("shape", ["L", "C", "G"])
def test_ecls_decomposition_exact(shape):
    ecls = km(Kind("Ecls" + shape), beta=0.2, omega0=1.0, lambda0=0.9, scale=1.3)
    stat = km(Kind("Stationary" + shape), beta=0.2, omega0=1.0, scale=1.3)
    for t, s in [(1, 4), (5, 5), (12, 3)]:
        assert eval_kernel(ecls, t, s) == 0.9 ** (t + s) * eval_kernel(stat, t - s + 50, 50) or \
            eval_kernel(ecls, t, s) == pytest.approx(0.9 ** (t + s) * eval_kernel(stat, t - s + 50, 50), rel=1e-13)


@pytest.mark.parametrize("shape", ["L", "C", "G"])
def test_ecls_diagonal_decreasing(shape):
    d = np.diag(gram(km(Kind("Ecls" + shape), beta=0.2, omega0=1.0, lambda0=0.9), IDX))
    np.testing.assert_allclose(d, 0.81 ** IDX, rtol=1e-12)
    assert np.all(np.diff(d) < 0)


@pytest.mark.parametrize("shape", ["L", "C", "G"])
def test_integrated_matches_numeric_integration(shape):
    k = km(Kind("Integrated" + shape), beta=0.3, omega0=0.8, lambda_m=0.4, lambda_M=0.9)
    lag = Psd1d(dict(L="laplacian", C="cauchy", G="gaussian")[shape], beta=0.3, omega0=0.8).lag_kernel
    lo, hi = math.log(0.4), math.log(0.9)
    for t in range(1, 11, 3):
        for s in range(1, 11, 4):
            num, _ = integrate.quad(lambda a: math.exp(a * (t + s)), lo, hi, epsabs=0, epsrel=1e-13)
            assert eval_kernel(k, t, s) == pytest.approx(num * lag(t - s), rel=1e-10)


def test_gram_fast_path_matches_elementwise():
    for kind in [Kind.ECLS_G, Kind.INTEGRATED_C, Kind.DC, Kind.STATIONARY_L]:
        k = km(kind, beta=0.2, omega0=0.5, lambda0=0.9, lambda_m=0.5, lambda_M=0.95)
        G = gram(k, IDX)
        E = eval_kernel(k, IDX[:, None], IDX[None, :])
        np.testing.assert_allclose(G, E, rtol=1e-12, atol=1e-300)


def test_gram_single_index_and_permutation():
    k = km(Kind.INTEGRATED_L, beta=0.2, omega0=0.5, lambda_m=0.5, lambda_M=0.95)
    assert gram(k, [3]).shape == (1, 1)
    assert gram(k, [3])[0, 0] == eval_kernel(k, 3, 3)
    perm = np.random.default_rng(0).permutation(IDX)
    G = gram(k, IDX)
    Gp = gram(k, perm)
    np.testing.assert_allclose(Gp, G[np.ix_(perm - 1, perm - 1)], rtol=1e-12)


def test_discrete_kernel_rejects_fractional_index():
    with pytest.raises(DomainMismatch):
        eval_kernel(km(Kind.TC, gamma=0.5), 1.5, 2)
    with pytest.raises(DomainMismatch):
        eval_kernel(km(Kind.TC, gamma=0.5), -1, 2)


@pytest.mark.parametrize("bad", [dict(beta=-1.0), dict(lambda0=1.5, beta=0.1), dict(gamma=0.0),
                                 dict(lambda_m=0.9, lambda_M=0.4, beta=0.1), dict(scale=0.0, gamma=1.0)])
def test_invalid_hyperparameters_rejected(bad):
    with pytest.raises(InvalidHyperParameter):
        HyperParams(**bad)


def test_missing_hyperparameter_rejected():
    with pytest.raises(InvalidHyperParameter):
        km(Kind.ECLS_L, beta=0.1)


def test_filter_impulse_matches_long_division():
    rho, th = 0.93, 3 * math.pi / 5
    from scipy import signal

    a = [1.0, -2 * rho * math.cos(th), rho**2]
    delta = np.zeros(10)
    delta[0] = 1.0
    np.testing.assert_allclose(filter_impulse(rho, th, 10), signal.lfilter([1.0], a, delta), rtol=1e-13)


def test_filter_identity_at_zero_radius():
    base = km(Kind.TC, gamma=0.3)
    f = filtered_kernel(base, 0.0, 1.0, 30)
    np.testing.assert_allclose(gram(f, np.arange(1, 31)), gram(base, np.arange(1, 31)), rtol=1e-14)
    f_small = filtered_kernel(base, 1e-6, 1.0, 30)
    np.testing.assert_allclose(gram(f_small, np.arange(1, 31)), gram(base, np.arange(1, 31)), atol=1e-4)


def test_filtered_gram_is_congruence_and_psd():
    base = km(Kind.TC, gamma=0.3)
    f = filtered_kernel(base, 0.93, 3 * math.pi / 5, 60)
    G = gram(f, np.arange(1, 61))
    ev = np.linalg.eigvalsh(G)
    assert ev.min() >= -1e-8 * ev.max()
    from scipy.linalg import toeplitz

    L = toeplitz(filter_impulse(0.93, 3 * math.pi / 5, 60), np.zeros(60))
    np.testing.assert_allclose(G, L @ gram(base, np.arange(1, 61)) @ L.T, rtol=1e-10, atol=1e-14)


def test_filter_pole_validation():
    with pytest.raises(InvalidFilterPole):
        filtered_kernel(km(Kind.TC, gamma=0.3), 1.0, 0.0, 10)


def test_filtered_beyond_horizon():
    f = filtered_kernel(km(Kind.TC, gamma=0.3), 0.5, 0.0, 10)
    with pytest.raises(DomainMismatch):
        eval_kernel(f, 11, 1)


def test_white_discrete_psd():
    psd = DiscretePsd(lambda tau: (np.asarray(tau) == 0).astype(float), truncation=4)
    np.testing.assert_allclose(psd(np.linspace(-3, 3, 7)), 1 / math.pi, rtol=1e-14)


def test_dc_psd_geometric_series():
    k = km(Kind.DC, beta=0.1, lambda0=0.9)
    # geometric series: (1/pi)(1 + 2 e^-b / (1 - e^-b)) = coth(b/2) / pi = 6.37150...
    expected = (1 + 2 * math.exp(-0.1) / (1 - math.exp(-0.1))) / math.pi
    assert expected == pytest.approx(1 / (math.tanh(0.05) * math.pi), rel=1e-13)
    assert stationary_psd_discrete(k)(np.array([0.0]))[0] == pytest.approx(expected, rel=1e-12)
    truncated = stationary_psd_discrete(k, truncation=400)
    assert truncated(np.array([0.0]))[0] == pytest.approx(expected, rel=1e-12)


@pytest.mark.parametrize("kind", [Kind.ECLS_L, Kind.ECLS_C, Kind.ECLS_G, Kind.SS, Kind.TC])
def test_discrete_psd_inverts_to_zero_lag(kind):
    k = km(kind, beta=0.2, omega0=1.0, lambda0=0.9, gamma=0.3)
    psd = stationary_psd_discrete(k)
    _, k1 = ecls_decomposition(k)
    val, _ = integrate.quad(lambda x: 0.5 * psd(np.array([x]))[0], -math.pi, math.pi, points=[-1.0, 1.0],
                            limit=400, epsabs=1e-12)
    assert val == pytest.approx(float(k1(0.0)), abs=1e-8)


def test_truncation_insufficient():
    with pytest.raises(TruncationInsufficient):
        stationary_psd_discrete(km(Kind.DC, beta=0.01, lambda0=0.9), truncation=10)


@pytest.mark.parametrize("kind", [Kind.ECLS_C, Kind.INTEGRATED_G, Kind.DC, Kind.TC, Kind.ITC])
def test_kernel_to_gpsd_reproduces_kernel(kind):
    k = km(kind, beta=0.2, omega0=1.0, lambda0=0.9, gamma=0.3, lambda_m=0.4, lambda_M=0.9, scale=1.7)
    g = kernel_to_gpsd(k)
    T, S = np.meshgrid(np.arange(0, 8), np.arange(0, 8), indexing="ij")
    np.testing.assert_allclose(g.kernel(T, S), eval_kernel(k, T, S), rtol=1e-11)


def test_config_round_trip():
    k = filtered_kernel(km(Kind.INTEGRATED_L, beta=0.2, omega0=1.0, lambda_m=0.4, lambda_M=0.9), 0.9, 1.0, 20)
    k2 = KernelModel.from_config(k.to_config())
    np.testing.assert_array_equal(gram(k2, np.arange(1, 21)), gram(k, np.arange(1, 21)))


_KINDS = [Kind.STATIONARY_L, Kind.STATIONARY_C, Kind.STATIONARY_G, Kind.ECLS_L, Kind.ECLS_C, Kind.ECLS_G, Kind.TC,
          Kind.SS, Kind.DC, Kind.INTEGRATED_L, Kind.INTEGRATED_C, Kind.INTEGRATED_G, Kind.ITC, Kind.ITC_BAR]


@settings(max_examples=60, deadline=None)
@given(kind=st.sampled_from(_KINDS), beta=st.floats(0.01, 3.0), omega0=st.floats(0.0, math.pi),
       lam=st.floats(0.3, 0.99), width=st.floats(0.01, 0.6), gamma=st.floats(0.01, 2.0))
def test_gram_psd_and_symmetric(kind, beta, omega0, lam, width, gamma):
    lm = max(lam - width, 0.01)
    k = km(kind, beta=beta, omega0=omega0, lambda0=lam, lambda_m=lm, lambda_M=lam, gamma=gamma)
    G = gram(k, IDX)
    assert np.array_equal(G, G.T)
    ev = np.linalg.eigvalsh(G)
    assert ev.min() >= -1e-8 * ev.max()
