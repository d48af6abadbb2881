import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy import linalg

from gpsdkit.exceptions import ImaginaryResidue, NotPositiveDefinite, OptimizationFailed
from gpsdkit.features import FeatureExpansion
from gpsdkit.kernels import HyperParams, KernelModel, Kind, gram, stationary_psd_discrete
from gpsdkit.regression import (
    DataRecord,
    KernelTemplate,
    OptBudget,
    build_regressor,
    cholesky_with_jitter,
    fit_hyperparameters,
    negative_log_likelihood,
    nll_scale_gradient,
    posterior,
    posterior_freq_domain,
    posterior_low_rank,
    posterior_time_domain,
)


def random_record(N, n, kernel=None, sigma2=0.1, seed=0):
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(N)
    if kernel is None:
        g = 0.8 ** np.arange(1, n + 1) * np.cos(0.9 * np.arange(1, n + 1))
    else:
        K = gram(kernel, np.arange(1, n + 1))
        g = linalg.cholesky(K + 1e-12 * np.eye(n), lower=True) @ rng.standard_normal(n)
    y = build_regressor(u, N, n) @ g + math.sqrt(sigma2) * rng.standard_normal(N)
    return DataRecord(u, y, sigma2), g


ECLS = KernelModel(Kind.ECLS_L, HyperParams(beta=0.2, omega0=0.0, lambda0=0.9))


# --- build_regressor ---------------------------------------------------------


def test_regressor_impulse_follows_strict_causality():
    # Phi[k, s] = u(k - s) with u(j) = 0 for j <= 0: an impulse at t=1 appears at k = s + 1
    Phi = build_regressor([1.0, 0.0, 0.0], 3, 2)
    np.testing.assert_array_equal(Phi, [[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])


def test_regressor_columns_are_zero_filled_shifts():
    u = np.arange(1.0, 9.0)
    Phi = build_regressor(u, 8, 4)
    for s in range(1, 5):
        np.testing.assert_array_equal(Phi[:, s - 1], np.concatenate([np.zeros(s), u[: 8 - s]]))


def test_regressor_white_noise_gram_is_near_identity():
    u = np.random.default_rng(3).standard_normal(2000)
    M = build_regressor(u, 2000, 10)
    C = M.T @ M / 2000
    off = C - np.diag(np.diag(C))
    assert np.max(np.abs(off)) < 0.1
    np.testing.assert_allclose(np.diag(C), 1.0, atol=0.1)


def test_regressor_rejects_short_input():
    with pytest.raises(ValueError):
        build_regressor([1.0, 2.0], 3, 1)


def test_data_record_validation():
    with pytest.raises(ValueError):
        DataRecord([1.0, 2.0], [1.0], 0.1)
    with pytest.raises(ValueError):
        DataRecord([1.0, np.nan], [1.0, 2.0], 0.1)


# --- time-domain posterior ---------------------------------------------------


def test_scalar_bayes_formula():
    # strict causality needs u(0) to reach y(1), so use N=2, n=1 and read y(2)
    k, s2 = 2.0, 0.5
    data = DataRecord([1.0, 0.0], [0.0, 3.0], s2)
    est = posterior_time_domain(np.array([[k]]), data, 1)
    assert est.g_hat[0] == pytest.approx(k * 3.0 / (k + s2), rel=1e-14)
    assert est.posterior_cov_diag[0] == pytest.approx(k - k * k / (k + s2), rel=1e-13)


def test_huge_noise_returns_prior_mean():
    data, _ = random_record(100, 20)
    power = float(np.var(data.y))
    est = posterior_time_domain(ECLS, data, 20, sigma2=1e12 * power)
    assert np.max(np.abs(est.g_hat)) < 1e-6 * ECLS.hyper.scale


def test_interpolation_limit():
    data, g = random_record(200, 30, kernel=ECLS, sigma2=1e-10, seed=5)
    est = posterior_time_domain(ECLS, data, 30)
    assert np.linalg.norm(est.g_hat - g) / np.linalg.norm(g) < 1e-3


def test_posterior_variance_nonnegative_and_below_prior():
    data, _ = random_record(80, 25)
    est = posterior_time_domain(ECLS, data, 25)
    prior = np.diag(gram(ECLS, np.arange(1, 26)))
    assert np.all(est.posterior_cov_diag >= -1e-10)
    assert np.all(est.posterior_cov_diag <= prior + 1e-12)


def test_long_record_uses_thin_qr_consistently():
    # N > n switches to the QR-reduced solve; compare with the explicit N x N formula
    data, _ = random_record(120, 15)
    K = gram(ECLS, np.arange(1, 16))
    Phi = build_regressor(data.u, data.N, 15)
    V = Phi @ K @ Phi.T + data.sigma2 * np.eye(data.N)
    direct = K @ Phi.T @ np.linalg.solve(V, data.y)
    np.testing.assert_allclose(posterior_time_domain(ECLS, data, 15).g_hat, direct, rtol=1e-9, atol=1e-12)


# --- frequency-domain posterior --------------------------------------------


@pytest.fixture(scope="module")
def prop_data():
    return random_record(50, 30, kernel=ECLS, sigma2=0.05, seed=11)[0]


def test_frequency_domain_matches_time_domain(prop_data):
    td = posterior_time_domain(ECLS, prop_data, 30)
    fd = posterior_freq_domain(0.9, stationary_psd_discrete(ECLS), prop_data, 30, 512)
    assert np.linalg.norm(fd.g_hat - td.g_hat) / np.linalg.norm(td.g_hat) <= 1e-3
    assert fd.nll == pytest.approx(td.nll, rel=1e-3)


def test_frequency_domain_converges_under_refinement(prop_data):
    td = posterior_time_domain(ECLS, prop_data, 30).g_hat
    psd = stationary_psd_discrete(ECLS)
    errs = [np.linalg.norm(posterior_freq_domain(0.9, psd, prop_data, 30, m).g_hat - td) for m in (128, 256, 512, 1024)]
    floor = 1e-12 * np.linalg.norm(td)
    assert all(b < a or b < floor for a, b in zip(errs, errs[1:]))


def test_frequency_domain_zero_psd_gives_zero(prop_data):
    est = posterior_freq_domain(0.9, lambda th: np.zeros_like(th), prop_data, 30, 64)
    np.testing.assert_array_equal(est.g_hat, 0.0)


def test_frequency_domain_rejects_odd_grid(prop_data):
    with pytest.raises(ValueError):
        posterior_freq_domain(0.9, stationary_psd_discrete(ECLS), prop_data, 30, 65)


def test_imaginary_residue_is_reported(prop_data):
    # an asymmetric density has no real kernel, so the discarded imaginary part is large
    with pytest.raises(ImaginaryResidue):
        posterior_freq_domain(0.9, lambda th: (th > 0).astype(float), prop_data, 30, 64)


# --- low-rank posterior ------------------------------------------------------


def exact_factor_expansion(n, seed=0):
    # atoms with lambda = 1 and theta spread over [0, pi]: Z Z^T is a valid Gram with full row rank
    rng = np.random.default_rng(seed)
    theta = np.sort(rng.uniform(0, np.pi, n))
    return FeatureExpansion(np.ones(n), theta, rng.uniform(0.5, 2.0, n))


def test_low_rank_matches_full_for_exact_factorization():
    e = exact_factor_expansion(20)
    data, _ = random_record(60, 20, seed=2)
    from gpsdkit.features import expansion_gram

    K = expansion_gram(e, np.arange(1, 21))
    lr = posterior_low_rank(e, data, 20)
    full = posterior_time_domain(K, data, 20)
    np.testing.assert_allclose(lr.g_hat, full.g_hat, rtol=1e-8, atol=1e-10 * np.abs(full.g_hat).max())
    np.testing.assert_allclose(lr.posterior_cov_diag, full.posterior_cov_diag, rtol=1e-7, atol=1e-10)
    assert lr.nll == pytest.approx(full.nll, rel=1e-10)


def test_low_rank_zero_output():
    e = exact_factor_expansion(10)
    data = DataRecord(np.random.default_rng(0).standard_normal(40), np.zeros(40), 0.1)
    np.testing.assert_array_equal(posterior_low_rank(e, data, 10).g_hat, 0.0)


def test_low_rank_benchmark_shape():
    from gpsdkit.features import grid_expansion
    from gpsdkit.gpsd import discretize
    from gpsdkit.kernels import kernel_to_gpsd

    k = KernelModel(Kind.INTEGRATED_L, HyperParams(beta=0.3, omega0=1.0, lambda_m=0.5, lambda_M=0.95))
    e = grid_expansion(discretize(kernel_to_gpsd(k), 1.0, None), 3, 5)
    data, _ = random_record(230, 100, seed=1)
    est = posterior(e, data, 100)
    assert est.method == "LowRank"
    assert est.diagnostics["dim"] == 30
    assert np.all(np.isfinite(est.g_hat)) and est.g_hat.shape == (100,)


# --- negative log-likelihood -------------------------------------------------


def test_nll_of_zero_kernel_is_pure_noise():
    data, _ = random_record(40, 10)
    s2 = 0.3
    expected = 0.5 * data.y @ data.y / s2 + 0.5 * data.N * math.log(2 * math.pi * s2)
    assert negative_log_likelihood(np.zeros((10, 10)), data, 10, sigma2=s2) == pytest.approx(expected, rel=1e-12)


def test_nll_matches_dense_formula():
    data, _ = random_record(40, 10)
    K = gram(ECLS, np.arange(1, 11))
    Phi = build_regressor(data.u, data.N, 10)
    V = Phi @ K @ Phi.T + data.sigma2 * np.eye(data.N)
    _, logdet = np.linalg.slogdet(V)
    expected = 0.5 * data.y @ np.linalg.solve(V, data.y) + 0.5 * logdet + 0.5 * data.N * math.log(2 * math.pi)
    assert negative_log_likelihood(ECLS, data, 10) == pytest.approx(expected, rel=1e-10)


def test_nll_invariant_under_row_permutation():
    # permuting data rows together with regressor rows leaves V's spectrum unchanged
    data, _ = random_record(40, 10)
    K = gram(ECLS, np.arange(1, 11))
    Phi = build_regressor(data.u, data.N, 10)
    perm = np.random.default_rng(1).permutation(data.N)

    def dense(P, y):
        V = P @ K @ P.T + data.sigma2 * np.eye(data.N)
        _, logdet = np.linalg.slogdet(V)
        return 0.5 * y @ np.linalg.solve(V, y) + 0.5 * logdet

    assert dense(Phi[perm], data.y[perm]) == pytest.approx(dense(Phi, data.y), rel=1e-12)
    assert negative_log_likelihood(ECLS, data, 10) == pytest.approx(
        dense(Phi[perm], data.y[perm]) + 0.5 * data.N * math.log(2 * math.pi), rel=1e-10)


def test_scale_gradient_matches_finite_differences():
    data, _ = random_record(60, 15)
    k = ECLS.with_hyper(scale=1.7)
    h = 1e-5 * 1.7
    fd = (negative_log_likelihood(k.with_hyper(scale=1.7 + h), data, 15)
          - negative_log_likelihood(k.with_hyper(scale=1.7 - h), data, 15)) / (2 * h)
    assert nll_scale_gradient(k, data, 15) == pytest.approx(fd, rel=1e-4)


def test_jitter_recovers_singular_gram_and_fails_on_indefinite():
    A = np.ones((5, 5))
    L, jit = cholesky_with_jitter(A)
    assert jit > 0
    np.testing.assert_allclose(L @ L.T, A + jit * np.eye(5), atol=1e-12)
    with pytest.raises(NotPositiveDefinite):
        cholesky_with_jitter(-np.eye(3))


# --- hyperparameter fitting --------------------------------------------------


def test_scale_fit_matches_grid_search():
    data, _ = random_record(150, 20, kernel=ECLS.with_hyper(scale=3.0), sigma2=0.1, seed=7)
    tmpl = KernelTemplate.from_kernel(ECLS, {"scale": (1e-2, 1e2)}, fit_sigma2=False)
    res = fit_hyperparameters(tmpl, data, 20, OptBudget(n_starts=3, max_evals=200))
    grid = np.logspace(-2, 2, 1000)
    vals = [negative_log_likelihood(ECLS.with_hyper(scale=c), data, 20) for c in grid]
    oracle = grid[int(np.argmin(vals))]
    assert res.params["scale"] == pytest.approx(oracle, rel=0.01)
    assert res.nll <= min(vals) + 1e-9


def test_tc_decay_consistency_band():
    fitted = []
    for seed in range(20):
        k = KernelModel(Kind.TC, HyperParams(gamma=0.4))
        data, _ = random_record(500, 40, kernel=k, sigma2=0.01, seed=100 + seed)
        tmpl = KernelTemplate.from_kernel(k, {"gamma": (0.01, 3.0)}, fit_sigma2=False)
        fitted.append(fit_hyperparameters(tmpl, data, 40, OptBudget(n_starts=2, max_evals=150)).params["gamma"])
    assert all(0.2 <= g <= 0.8 for g in fitted)


def test_fitted_parameters_respect_bounds():
    data, _ = random_record(120, 30, seed=4)
    k = KernelModel(Kind.INTEGRATED_L, HyperParams(beta=0.3, omega0=1.0, lambda_m=0.5, lambda_M=0.95))
    free = {"beta": (1e-3, 10.0), "omega0": (0.0, math.pi), "lambda_m": (0.01, 0.995),
            "lambda_M": (0.01, 0.995), "scale": (1e-3, 1e3)}
    res = fit_hyperparameters(KernelTemplate.from_kernel(k, free), data, 30, OptBudget(n_starts=2, max_evals=120))
    for name, (lo, hi) in free.items():
        assert lo <= res.params[name] <= hi
    assert res.params["lambda_m"] < res.params["lambda_M"]
    vy = float(np.var(data.y))
    assert 1e-6 * vy <= res.sigma2 <= vy
    assert len(res.start_nlls) == 2 and res.nll == min(res.start_nlls)


def test_fit_is_deterministic_given_seed():
    data, _ = random_record(100, 20, seed=3)
    tmpl = KernelTemplate.from_kernel(ECLS, {"beta": (1e-3, 10.0), "scale": (1e-3, 1e3)})
    a = fit_hyperparameters(tmpl, data, 20, OptBudget(n_starts=2, max_evals=100, seed=9))
    b = fit_hyperparameters(tmpl, data, 20, OptBudget(n_starts=2, max_evals=100, seed=9))
    assert a.params == b.params and a.nll == b.nll


def test_fit_fails_when_every_start_is_infinite():
    data, _ = random_record(40, 10)

    def build(params):
        raise NotPositiveDefinite("always")

    with pytest.raises(OptimizationFailed):
        fit_hyperparameters(KernelTemplate(build, {"scale": (0.1, 10.0)}), data, 10, OptBudget(n_starts=1, max_evals=20))


def test_budget_rejects_unknown_sigma2_start():
    with pytest.raises(ValueError):
        OptBudget(sigma2_start="median")
    with pytest.raises(ValueError):
        OptBudget(n_candidates=-1)


# --- invariants --------------------------------------------------------------


@pytest.mark.parametrize("seed", range(5))
def test_shrinkage_monotone_in_noise_variance(seed):
    data, _ = random_record(80, 20, kernel=ECLS, sigma2=0.1, seed=seed)
    K = gram(ECLS, np.arange(1, 21))
    norms = []
    for s2 in (1e-6, 1e-3, 1e-1, 1.0, 10.0):
        g = posterior_time_domain(ECLS, data, 20, sigma2=s2).g_hat
        norms.append(float(g @ np.linalg.solve(K, g)))
    assert all(b <= a * (1 + 1e-8) for a, b in zip(norms, norms[1:]))


@settings(max_examples=20, deadline=None)
@given(st.integers(0, 10_000), st.floats(0.05, 0.6), st.floats(1e-3, 1.0))
def test_methods_agree_on_ecls(seed, beta, s2):
    k = KernelModel(Kind.ECLS_L, HyperParams(beta=beta, omega0=0.0, lambda0=0.8))
    data, _ = random_record(40, 20, seed=seed, sigma2=s2)
    td = posterior_time_domain(k, data, 20).g_hat
    fd = posterior_freq_domain(0.8, stationary_psd_discrete(k), data, 20, 2048).g_hat
    assert np.linalg.norm(fd - td) <= 1e-3 * max(np.linalg.norm(td), 1e-12)
