"""Gaussian-process impulse-response estimation for output-error models.

The data model is ``y = Phi g + e`` with ``Phi`` the strictly causal
regressor built from the input and ``g ~ N(0, K)``.  For ``N >= n`` every
solve works on the thin QR factor of ``Phi``: with ``Phi = Q R`` and
``y~ = Q^T y`` the ``N x N`` output covariance ``V = Phi K Phi^T + sigma2 I``
reduces to the ``n x n`` matrix ``M = R K R^T + sigma2 I`` plus a scalar
part on the orthogonal complement, so likelihood evaluations cost
``O(n^3)`` regardless of ``N``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Optional

import numpy as np
from scipy import linalg, optimize
from scipy.stats import qmc

from ._validation import check_scalar, check_signal
from .exceptions import ImaginaryResidue, InvalidHyperParameter, NotPositiveDefinite, OptimizationFailed

__all__ = [
    "DataRecord",
    "build_regressor",
    "PosteriorEstimate",
    "prepare",
    "posterior_time_domain",
    "posterior_freq_domain",
    "posterior_low_rank",
    "posterior",
    "negative_log_likelihood",
    "nll_scale_gradient",
    "OptBudget",
    "KernelTemplate",
    "FitResult",
    "fit_hyperparameters",
    "cholesky_with_jitter",
]

JITTER_START = 1e-10
JITTER_MAX = 1e-4


@dataclass(frozen=True, eq=False)
class DataRecord:
    """Input/output record ``u(1..N), y(1..N)`` and (optional) noise variance."""

    u: np.ndarray
    y: np.ndarray
    sigma2: Optional[float] = None

    def __post_init__(self):
        u = check_signal(self.u, "u")
        y = check_signal(self.y, "y")
        if u.shape != y.shape:
            raise ValueError(f"u and y must have equal length, got {u.size} and {y.size}")
        if self.sigma2 is not None:
            check_scalar(self.sigma2, "sigma2", lower=0.0, closed="neither")
        u.setflags(write=False)
        y.setflags(write=False)
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "y", y)

    @property
    def N(self):
        return self.u.size


def build_regressor(u, N, n):
    """Strictly causal regressor, ``Phi[k, s] = u(k - s)`` for ``k = 1..N``, ``s = 1..n``.

    Inputs before time 1 are zero, so column ``s`` is ``u`` delayed by ``s``
    samples with zero fill.
    """
    u = np.asarray(u, dtype=float).ravel()
    N = check_scalar(N, "N", lower=1, integer=True)
    n = check_scalar(n, "n", lower=1, integer=True)
    if u.size < N:
        raise ValueError(f"need at least N={N} input samples, got {u.size}")
    col = np.concatenate([[0.0], u[: N - 1]])
    return linalg.toeplitz(col, np.zeros(n))


def cholesky_with_jitter(A):
    """Lower Cholesky factor of ``A``, adding diagonal jitter on failure.

    Jitter starts at ``1e-10`` times the mean diagonal and grows tenfold up
    to ``1e-4``.

    Returns
    -------
    L : ndarray
    jitter : float
        Absolute jitter that was added (0 when none was needed).
    """
    A = np.asarray(A, dtype=float)
    try:
        return linalg.cholesky(A, lower=True, check_finite=False), 0.0
    except linalg.LinAlgError:
        pass
    if not np.all(np.isfinite(A)):
        raise NotPositiveDefinite("matrix has non-finite entries")
    base = float(np.mean(np.diag(A)))
    if not base > 0:
        base = 1.0
    eps = JITTER_START
    while eps <= JITTER_MAX * (1 + 1e-12):
        try:
            J = eps * base
            return linalg.cholesky(A + J * np.eye(A.shape[0]), lower=True, check_finite=False), J
        except linalg.LinAlgError:
            eps *= 10.0
    raise NotPositiveDefinite("factorization failed after maximal jitter")


@dataclass(frozen=True, eq=False)
class _Prepared:
    Phi: np.ndarray
    y: np.ndarray
    R: Optional[np.ndarray]
    ytil: Optional[np.ndarray]
    yy: float
    N: int
    n: int


def prepare(data, n):
    """Precompute the regressor and its thin QR factorization for repeated solves."""
    n = check_scalar(n, "n", lower=1, integer=True)
    Phi = build_regressor(data.u, data.N, n)
    y = np.asarray(data.y, dtype=float)
    R = ytil = None
    if data.N >= n:
        Q, R = np.linalg.qr(Phi, mode="reduced")
        ytil = Q.T @ y
    return _Prepared(Phi, y, R, ytil, float(y @ y), data.N, n)


@dataclass(frozen=True, eq=False)
class PosteriorEstimate:
    """Posterior mean and marginal variances of ``g(1..n)``."""

    g_hat: np.ndarray
    posterior_cov_diag: np.ndarray
    fitted_hyper: Any
    nll: float
    method: str
    sigma2: float
    diagnostics: dict = field(default_factory=dict)

    @property
    def posterior_sd(self):
        return np.sqrt(np.maximum(self.posterior_cov_diag, 0.0))


def _sigma2(data, sigma2):
    s = data.sigma2 if sigma2 is None else sigma2
    if s is None:
        raise ValueError("noise variance is neither given nor stored in the data record")
    return check_scalar(s, "sigma2", lower=0.0, closed="neither")


def _gram_of(model, n):
    from .features import FeatureExpansion, feature_matrix
    from .kernels import gram

    if isinstance(model, FeatureExpansion):
        Z = feature_matrix(model, np.arange(1, n + 1))
        return Z @ Z.T
    if isinstance(model, np.ndarray):
        if model.shape != (n, n):
            raise ValueError(f"Gram matrix must be {n}x{n}")
        return model
    return gram(model, np.arange(1, n + 1))


def _full_solve(K, prep, sigma2, want_cov):
    """GP posterior and NLL from an explicit ``n x n`` prior covariance."""
    if prep.R is not None:
        RK = prep.R @ K
        M = RK @ prep.R.T
        M = 0.5 * (M + M.T)
        M[np.diag_indices_from(M)] += sigma2
        L, jit = cholesky_with_jitter(M)
        w = linalg.cho_solve((L, True), prep.ytil, check_finite=False)
        quad = prep.ytil @ w + (prep.yy - prep.ytil @ prep.ytil) / sigma2
        logdet = 2.0 * np.sum(np.log(np.diag(L))) + (prep.N - prep.n) * math.log(sigma2)
        g_hat = RK.T @ w
        cov = None
        if want_cov:
            S = linalg.solve_triangular(L, RK, lower=True, check_finite=False)
            cov = np.diag(K) - np.einsum("ij,ij->j", S, S)
    else:
        PK = prep.Phi @ K
        V = PK @ prep.Phi.T
        V = 0.5 * (V + V.T)
        V[np.diag_indices_from(V)] += sigma2
        L, jit = cholesky_with_jitter(V)
        w = linalg.cho_solve((L, True), prep.y, check_finite=False)
        quad = prep.y @ w
        logdet = 2.0 * np.sum(np.log(np.diag(L)))
        g_hat = PK.T @ w
        cov = None
        if want_cov:
            S = linalg.solve_triangular(L, PK, lower=True, check_finite=False)
            cov = np.diag(K) - np.einsum("ij,ij->j", S, S)
    nll = 0.5 * quad + 0.5 * logdet + 0.5 * prep.N * math.log(2.0 * math.pi)
    return g_hat, cov, float(nll), jit


def _low_rank_solve(Z, prep, sigma2, want_cov):
    """Bayesian linear regression on features ``Z`` (``n x d``), Woodbury form."""
    C = prep.R @ Z if prep.R is not None else prep.Phi @ Z
    rhs = C.T @ (prep.ytil if prep.R is not None else prep.y)
    A = C.T @ C / sigma2
    A = 0.5 * (A + A.T)
    A[np.diag_indices_from(A)] += 1.0
    L, jit = cholesky_with_jitter(A)
    b = linalg.cho_solve((L, True), rhs, check_finite=False)
    g_hat = Z @ b / sigma2
    quad = (prep.yy - rhs @ b / sigma2) / sigma2
    logdet = 2.0 * np.sum(np.log(np.diag(L))) + prep.N * math.log(sigma2)
    nll = 0.5 * quad + 0.5 * logdet + 0.5 * prep.N * math.log(2.0 * math.pi)
    cov = None
    if want_cov:
        S = linalg.solve_triangular(L, Z.T, lower=True, check_finite=False)
        cov = np.einsum("ij,ij->j", S, S)
    return g_hat, cov, float(nll), jit


def posterior_time_domain(kernel, data, n, *, sigma2=None, prepared=None):
    """Standard GP posterior ``g_hat = K Phi^T (Phi K Phi^T + sigma2 I)^-1 y``.

    ``kernel`` may be a :class:`KernelModel`, a feature expansion or an
    explicit ``n x n`` Gram matrix.

    Raises
    ------
    NotPositiveDefinite
        If the output covariance cannot be factorized after maximal jitter.
    """
    s2 = _sigma2(data, sigma2)
    prep = prepared or prepare(data, n)
    K = _gram_of(kernel, prep.n)
    g_hat, cov, nll, jit = _full_solve(K, prep, s2, True)
    return PosteriorEstimate(g_hat, cov, getattr(kernel, "hyper", None), nll, "TimeDomain", s2,
                             {"jitter": jit})


def posterior_low_rank(expansion, data, n, *, sigma2=None, prepared=None):
    """Feature-space posterior ``g_hat = Z (Z^T Phi^T Phi Z / s2 + I)^-1 Z^T Phi^T y / s2``.

    Algebraically equal to :func:`posterior_time_domain` with ``K = Z Z^T``;
    the factorization is ``d x d`` with ``d = 2 * n_atoms``.
    """
    from .features import feature_matrix

    s2 = _sigma2(data, sigma2)
    prep = prepared or prepare(data, n)
    Z = feature_matrix(expansion, np.arange(1, prep.n + 1))
    g_hat, cov, nll, jit = _low_rank_solve(Z, prep, s2, True)
    return PosteriorEstimate(g_hat, cov, None, nll, "LowRank", s2, {"jitter": jit, "dim": Z.shape[1]})


def posterior(model, data, n, *, sigma2=None, prepared=None):
    """Dispatch to the low-rank solver for expansions, the time-domain one otherwise."""
    from .features import FeatureExpansion

    if isinstance(model, FeatureExpansion):
        return posterior_low_rank(model, data, n, sigma2=sigma2, prepared=prepared)
    return posterior_time_domain(model, data, n, sigma2=sigma2, prepared=prepared)


def posterior_freq_domain(lambda0, psd1, data, n, n_theta=1024, *, sigma2=None, residue_tol=1e-8):
    """Posterior through the modulated transform of the impulse response.

    With ``U(theta) = 1/2 sum_{s=1}^{n} lambda0^s u_s exp(j theta s)`` (``u_s``
    the ``s``-th regressor column) the output covariance is
    ``V = 2 int psd1 U U^H + sigma2 I`` and

        E[G(theta) | y] = 2 psd1(theta) U(theta)^H V^-1 y
        g_hat(t) = 1/2 lambda0^t int E[G(theta) | y] exp(j theta t) d theta

    Both integrals use the periodic trapezoid rule on ``n_theta`` nodes.
    ``psd1`` is normalized so that ``K1(m) = 1/2 int psd1 cos(theta m)``
    (see :func:`gpsdkit.kernels.stationary_psd_discrete`).

    Raises
    ------
    ImaginaryResidue
        If the discarded imaginary part of ``g_hat`` exceeds ``residue_tol``
        relative to its real part.
    """
    lambda0 = check_scalar(lambda0, "lambda0", lower=0.0, upper=1.0, closed="neither")
    n_theta = check_scalar(n_theta, "n_theta", lower=16, integer=True)
    if n_theta % 2:
        raise ValueError("n_theta must be even")
    s2 = _sigma2(data, sigma2)
    Phi = build_regressor(data.u, data.N, n)
    y = np.asarray(data.y, dtype=float)
    theta = -np.pi + 2.0 * np.pi * np.arange(n_theta) / n_theta
    dtheta = 2.0 * np.pi / n_theta
    dens = np.asarray(psd1(theta), dtype=float) * np.ones_like(theta)
    if np.any(dens < 0):
        raise ValueError("psd1 must be nonnegative")
    s = np.arange(1, n + 1)
    E = np.exp(1j * np.outer(s, theta))                       # n x M
    U = 0.5 * (Phi * lambda0 ** s) @ E                        # N x M
    W = U * (dens * dtheta)
    V = 2.0 * np.real(W @ U.conj().T)
    V = 0.5 * (V + V.T)
    V[np.diag_indices_from(V)] += s2
    L, jit = cholesky_with_jitter(V)
    w = linalg.cho_solve((L, True), y, check_finite=False)
    G_post = 2.0 * dens * (U.conj().T @ w)                    # M
    t = np.arange(1, n + 1)
    g_c = 0.5 * lambda0 ** t * (E @ G_post) * dtheta
    scale = max(1.0, float(np.max(np.abs(g_c.real), initial=0.0)))
    residue = float(np.max(np.abs(g_c.imag), initial=0.0)) / scale
    if residue > residue_tol:
        raise ImaginaryResidue(f"imaginary residue {residue:.3g} exceeds {residue_tol:g}; refine n_theta")
    C = (lambda0 ** t)[:, None] * ((E * (dens * dtheta)) @ U.conj().T)   # n x N cross covariance
    C = np.real(C)
    S = linalg.solve_triangular(L, C.T, lower=True, check_finite=False)
    prior_var = lambda0 ** (2 * t) * 0.5 * float(dens.sum() * dtheta)
    cov = prior_var - np.einsum("ij,ij->j", S, S)
    quad = y @ w
    nll = 0.5 * quad + np.sum(np.log(np.diag(L))) + 0.5 * data.N * math.log(2.0 * math.pi)
    return PosteriorEstimate(g_c.real, cov, None, float(nll), "FreqDomain", s2,
                             {"jitter": jit, "imag_residue": residue, "truncation": n,
                              "G_posterior": G_post, "theta": theta})


def negative_log_likelihood(model, data, n, *, sigma2=None, prepared=None):
    """``1/2 y^T V^-1 y + 1/2 log det V + N/2 log 2 pi`` with ``V = Phi K Phi^T + sigma2 I``.

    ``model`` is a kernel, a feature expansion (Woodbury path) or a Gram matrix.
    """
    from .features import FeatureExpansion, feature_matrix

    s2 = _sigma2(data, sigma2)
    prep = prepared or prepare(data, n)
    if isinstance(model, FeatureExpansion):
        Z = feature_matrix(model, np.arange(1, prep.n + 1))
        return _low_rank_solve(Z, prep, s2, False)[2]
    return _full_solve(_gram_of(model, prep.n), prep, s2, False)[2]


def nll_scale_gradient(kernel, data, n, *, sigma2=None, prepared=None):
    """Analytic derivative of the NLL with respect to the kernel ``scale``.

    With ``K = c Kbar``: ``d NLL / dc = 1/2 tr(V^-1 A) - 1/2 w^T A w`` where
    ``A = Phi Kbar Phi^T`` and ``w = V^-1 y``.
    """
    s2 = _sigma2(data, sigma2)
    prep = prepared or prepare(data, n)
    c = kernel.hyper.scale
    K = _gram_of(kernel, prep.n)
    Kbar = K / c
    if prep.R is not None:
        A = prep.R @ Kbar @ prep.R.T
        M = prep.R @ K @ prep.R.T + s2 * np.eye(prep.n)
        L, _ = cholesky_with_jitter(0.5 * (M + M.T))
        w = linalg.cho_solve((L, True), prep.ytil)
    else:
        A = prep.Phi @ Kbar @ prep.Phi.T
        V = prep.Phi @ K @ prep.Phi.T + s2 * np.eye(prep.N)
        L, _ = cholesky_with_jitter(0.5 * (V + V.T))
        w = linalg.cho_solve((L, True), prep.y)
    Minv_A = linalg.cho_solve((L, True), A)
    return float(0.5 * np.trace(Minv_A) - 0.5 * w @ A @ w)


# ---------------------------------------------------------------------------
# hyperparameter fitting
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class OptBudget:
    """Multi-start Nelder-Mead budget.

    ``sigma2_start="ls"`` starts every search at the residual variance of a
    least-squares FIR fit (when ``N > n``) instead of a Sobol value; the
    noise variance stays free in its box either way.

    ``n_candidates`` Sobol points are scored first and the ``n_starts`` best
    seed the searches.  Screening keeps the searches away from the flat
    null-model plateau (tiny scale, noise variance at ``var(y)``) that
    captures poorly placed starts.
    """

    n_starts: int = 5
    n_candidates: int = 64
    max_evals: int = 500
    seed: int = 0
    xatol: float = 1e-6
    fatol: float = 1e-9
    sigma2_start: str = "ls"

    def __post_init__(self):
        if self.n_candidates < 0:
            raise ValueError("n_candidates must be nonnegative")
        if self.sigma2_start not in ("ls", "sobol"):
            raise ValueError("sigma2_start must be 'ls' or 'sobol'")


_LINEAR_PARAMS = {"lambda0", "lambda_m", "lambda_M", "rho0", "omega0", "theta0", "alpha0",
                  "alpha_min", "alpha_max"}
_ORDERED_PAIRS = (("lambda_m", "lambda_M"), ("alpha_min", "alpha_max"))


@dataclass(frozen=True, eq=False)
class KernelTemplate:
    """Which hyperparameters are free, their boxes, and how to build a model.

    Parameters
    ----------
    build : callable
        ``build(params: dict) -> KernelModel | FeatureExpansion``.
    free : dict
        ``name -> (lower, upper)``.  Positive-bounded parameters other than
        decay radii, frequencies and phases are searched in log space.
    fit_sigma2 : bool
        Estimate the noise variance jointly (as ``"sigma2"``) instead of
        taking it from the data record.
    sigma2_bounds : tuple, optional
        Box for ``sigma2``; defaults to ``[1e-6, 1] * var(y)``.
    """

    build: Callable
    free: dict
    fit_sigma2: bool = True
    sigma2_bounds: Optional[tuple] = None

    @classmethod
    def from_kernel(cls, kernel, free, *, approx=None, fit_sigma2=True, sigma2_bounds=None):
        """Template that varies ``free`` fields of ``kernel.hyper``.

        ``approx=(n_alpha, n_omega)`` swaps the exact kernel for its grid
        expansion at every evaluation.
        """
        from .features import grid_expansion
        from .gpsd import discretize
        from .kernels import kernel_to_gpsd

        def build(params):
            k = kernel.with_hyper(**params)
            if approx is None:
                return k
            g = kernel_to_gpsd(k)
            if k.discrete:
                g = discretize(g, 1.0, None)
            return grid_expansion(g, approx[0], approx[1])

        return cls(build, dict(free), fit_sigma2, sigma2_bounds)


@dataclass(frozen=True, eq=False)
class FitResult:
    """Outcome of :func:`fit_hyperparameters`."""

    params: dict
    sigma2: float
    nll: float
    model: Any
    n_evals: int
    start_nlls: tuple

    @property
    def hyper(self):
        return getattr(self.model, "hyper", None)


def _transforms(free):
    names = list(free)
    logs = []
    lo, hi = [], []
    for name in names:
        a, b = free[name]
        if not a < b:
            raise ValueError(f"empty box for {name}: {a}, {b}")
        use_log = a > 0 and name not in _LINEAR_PARAMS
        logs.append(use_log)
        lo.append(math.log(a) if use_log else a)
        hi.append(math.log(b) if use_log else b)
    return names, np.array(logs), np.array(lo), np.array(hi)


def _ls_noise_variance(prep):
    """Residual variance of the least-squares FIR fit, or ``None`` if ``N <= n``."""
    dof = prep.N - prep.n
    if dof <= 0 or prep.ytil is None:
        return None
    val = (prep.yy - float(prep.ytil @ prep.ytil)) / dof
    return val if val > 0 else None


def fit_hyperparameters(template, data, n, budget=None):
    """Minimize the NLL over the template's free parameters.

    Starts come from a scrambled Sobol sequence over the (log-)box; each
    start runs a bounded Nelder-Mead search.  Orderings such as
    ``lambda_m < lambda_M`` are enforced by repairing starts and by an
    infinite-cost barrier.  Deterministic given ``budget.seed``.

    Raises
    ------
    OptimizationFailed
        If every start ends with a non-finite NLL.
    """
    budget = budget or OptBudget()
    free = dict(template.free)
    if template.fit_sigma2:
        vy = float(np.var(data.y)) or 1.0
        free["sigma2"] = template.sigma2_bounds or (1e-6 * vy, vy)
    elif data.sigma2 is None:
        raise ValueError("sigma2 is fixed but the data record carries none")
    names, logs, lo, hi = _transforms(free)
    prep = prepare(data, n)
    n_evals = [0]

    def unpack(x):
        x = np.clip(x, lo, hi)
        vals = np.where(logs, np.exp(x), x)
        return {k: float(v) for k, v in zip(names, vals)}

    def objective(x):
        n_evals[0] += 1
        p = unpack(x)
        s2 = p.pop("sigma2", data.sigma2)
        for a, b in _ORDERED_PAIRS:
            if a in p and b in p and not p[a] < p[b]:
                return 1e300
        try:
            model = template.build(p)
            val = negative_log_likelihood(model, data, n, sigma2=s2, prepared=prep)
        except (InvalidHyperParameter, NotPositiveDefinite, ValueError, FloatingPointError):
            return 1e300
        return val if np.isfinite(val) else 1e300

    d = len(names)
    sob = qmc.Sobol(d, scramble=True, rng=budget.seed)
    n_points = max(budget.n_starts, budget.n_candidates, 1)
    m = math.ceil(math.log2(n_points))
    starts = lo + (hi - lo) * sob.random_base2(m)[:n_points]
    if "sigma2" in names and budget.sigma2_start == "ls":
        s2_ls = _ls_noise_variance(prep)
        if s2_ls is not None:
            i = names.index("sigma2")
            starts[:, i] = np.clip(math.log(s2_ls) if logs[i] else s2_ls, lo[i], hi[i])
    for a, b in _ORDERED_PAIRS:
        if a in names and b in names:
            ia, ib = names.index(a), names.index(b)
            swap = starts[:, ia] > starts[:, ib]
            starts[swap, ia], starts[swap, ib] = starts[swap, ib], starts[swap, ia].copy()
    if len(starts) > budget.n_starts:
        with np.errstate(all="ignore"):
            scores = np.array([objective(x) for x in starts])
        starts = starts[np.argsort(scores, kind="stable")[: budget.n_starts]]

    best, best_val, start_vals = None, np.inf, []
    width = hi - lo
    for x0 in starts:
        simplex = np.tile(x0, (d + 1, 1))
        for i in range(d):
            step = 0.1 * width[i]
            simplex[i + 1, i] = x0[i] + step if x0[i] + step <= hi[i] else x0[i] - step
        with np.errstate(all="ignore"):
            res = optimize.minimize(objective, x0, method="Nelder-Mead", bounds=list(zip(lo, hi)),
                                    options={"maxfev": budget.max_evals, "xatol": budget.xatol,
                                             "fatol": budget.fatol, "initial_simplex": simplex})
        start_vals.append(float(res.fun))
        if res.fun < best_val:
            best, best_val = res.x, float(res.fun)
    if best is None or not best_val < 1e299:
        raise OptimizationFailed("no start produced a finite negative log-likelihood")
    params = unpack(best)
    s2 = params.pop("sigma2", data.sigma2)
    model = template.build(params)
    return FitResult(params, float(s2), best_val, model, n_evals[0], tuple(start_vals))
