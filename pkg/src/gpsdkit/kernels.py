"""Closed-form kernel evaluators and Gram-matrix construction.

Every kernel is a :class:`KernelModel`: a kind, a :class:`HyperParams`
record and a time domain.  Discrete-time kernels are parameterized by decay
radii ``lambda`` (per sample) and live on integer indices; continuous-time
kernels use decay rates ``alpha`` and accept nonnegative real times.
"""

from __future__ import annotations

import enum
import math
import warnings
from dataclasses import dataclass, field, fields, replace
from typing import Any, Optional

import numpy as np

from ._validation import check_indices, check_scalar
from .exceptions import (
    DomainMismatch,
    InvalidFilterPole,
    InvalidHyperParameter,
    TruncationInsufficient,
)
from .gpsd import (
    ContinuousGpsd,
    DiscreteGpsd,
    Psd1d,
    exp_integral,
    kernel_from_discrete_gpsd,
    kernel_from_gpsd_quadrature,
)

__all__ = [
    "Kind",
    "HyperParams",
    "KernelModel",
    "eval_kernel",
    "gram",
    "filter_impulse",
    "filtered_kernel",
    "DiscretePsd",
    "stationary_psd_discrete",
    "ecls_decomposition",
    "kernel_to_gpsd",
]


class Kind(str, enum.Enum):
    STATIONARY_L = "StationaryL"
    STATIONARY_C = "StationaryC"
    STATIONARY_G = "StationaryG"
    ECLS_L = "EclsL"
    ECLS_C = "EclsC"
    ECLS_G = "EclsG"
    TC = "TC"
    SS = "SS"
    DC = "DC"
    INTEGRATED_L = "IntegratedL"
    INTEGRATED_C = "IntegratedC"
    INTEGRATED_G = "IntegratedG"
    ITC = "ITC"
    ITC_BAR = "ITCBar"
    FILTERED = "Filtered"
    FROM_GPSD = "FromGpsd"
    FROM_FEATURES = "FromFeatures"


_SHAPE_OF = {
    Kind.STATIONARY_L: "laplacian", Kind.STATIONARY_C: "cauchy", Kind.STATIONARY_G: "gaussian",
    Kind.ECLS_L: "laplacian", Kind.ECLS_C: "cauchy", Kind.ECLS_G: "gaussian",
    Kind.INTEGRATED_L: "laplacian", Kind.INTEGRATED_C: "cauchy", Kind.INTEGRATED_G: "gaussian",
}
STATIONARY_KINDS = (Kind.STATIONARY_L, Kind.STATIONARY_C, Kind.STATIONARY_G)
ECLS_KINDS = (Kind.ECLS_L, Kind.ECLS_C, Kind.ECLS_G)
INTEGRATED_KINDS = (Kind.INTEGRATED_L, Kind.INTEGRATED_C, Kind.INTEGRATED_G)


@dataclass(frozen=True)
class HyperParams:
    """Kernel hyperparameters; unused fields stay ``None``.

    Range checks run at construction and raise :class:`InvalidHyperParameter`.
    """

    beta: Optional[float] = None
    omega0: Optional[float] = None
    alpha0: Optional[float] = None
    lambda0: Optional[float] = None
    alpha_min: Optional[float] = None
    alpha_max: Optional[float] = None
    lambda_m: Optional[float] = None
    lambda_M: Optional[float] = None
    gamma: Optional[float] = None
    scale: float = 1.0
    rho0: Optional[float] = None
    theta0: Optional[float] = None

    def __post_init__(self):
        def check(name, **kw):
            value = getattr(self, name)
            if value is None:
                return
            try:
                check_scalar(value, name, **kw)
            except (TypeError, ValueError) as exc:
                raise InvalidHyperParameter(str(exc)) from None

        check("beta", lower=0.0, closed="neither")
        check("omega0", lower=0.0)
        check("alpha0", upper=0.0, closed="neither")
        check("lambda0", lower=0.0, upper=1.0, closed="neither")
        check("alpha_min", upper=0.0)
        check("alpha_max", upper=0.0)
        check("lambda_m", lower=0.0, upper=1.0, closed="right")
        check("lambda_M", lower=0.0, upper=1.0, closed="right")
        check("gamma", lower=0.0, closed="neither")
        check("scale", lower=0.0, closed="neither")
        check("rho0", lower=0.0, upper=1.0, closed="left")
        check("theta0", lower=-math.pi, upper=math.pi)
        if self.alpha_min is not None and self.alpha_max is not None and not self.alpha_min < self.alpha_max:
            raise InvalidHyperParameter("alpha_min must be smaller than alpha_max")
        if self.lambda_m is not None and self.lambda_M is not None and not self.lambda_m < self.lambda_M:
            raise InvalidHyperParameter("lambda_m must be smaller than lambda_M")

    def replace(self, **changes):
        return replace(self, **changes)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self) if getattr(self, f.name) is not None}

    @classmethod
    def from_dict(cls, d):
        names = {f.name for f in fields(cls)}
        return cls(**{k: float(v) for k, v in d.items() if k in names and v is not None})


def _need(hyper, *names):
    missing = [n for n in names if getattr(hyper, n) is None]
    if missing:
        raise InvalidHyperParameter(f"missing hyperparameters: {', '.join(missing)}")


@dataclass(frozen=True, eq=False)
class KernelModel:
    """A covariance function ``K(t, s)`` with hyperparameters.

    Parameters
    ----------
    kind : Kind
    hyper : HyperParams
    time_domain : {"discrete", "continuous"}
    sampling_time : float
        Metadata for discrete kernels built from continuous descriptions.
    base, horizon
        Base kernel and Gram horizon of a ``Filtered`` kernel.
    gpsd, expansion
        Payload of ``FromGpsd`` and ``FromFeatures`` kernels.
    method : {"auto", "quadrature"}
        ``FromGpsd`` evaluation path: closed form when available, or the
        harmonic-representation quadrature.
    """

    kind: Kind
    hyper: HyperParams = field(default_factory=HyperParams)
    time_domain: str = "discrete"
    sampling_time: float = 1.0
    base: Optional["KernelModel"] = None
    horizon: Optional[int] = None
    gpsd: Any = None
    expansion: Any = None
    method: str = "auto"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind(self.kind))
        if self.time_domain not in ("discrete", "continuous"):
            raise ValueError("time_domain must be 'discrete' or 'continuous'")
        if self.method not in ("auto", "quadrature"):
            raise ValueError("method must be 'auto' or 'quadrature'")
        self._validate()

    @property
    def discrete(self):
        return self.time_domain == "discrete"

    def _validate(self):
        k, h = self.kind, self.hyper
        dec0 = "lambda0" if self.discrete else "alpha0"
        band = ("lambda_m", "lambda_M") if self.discrete else ("alpha_min", "alpha_max")
        if k in STATIONARY_KINDS:
            _need(h, "beta")
        elif k in ECLS_KINDS:
            _need(h, "beta", dec0)
        elif k in (Kind.TC, Kind.SS):
            _need(h, "gamma")
        elif k == Kind.DC:
            _need(h, "beta", dec0)
        elif k in INTEGRATED_KINDS:
            _need(h, "beta", *band)
        elif k in (Kind.ITC, Kind.ITC_BAR):
            _need(h, *band)
            if k == Kind.ITC_BAR and not self.discrete:
                raise DomainMismatch("ITCBar integrates over decay radii and is discrete-time only")
        elif k == Kind.FILTERED:
            if self.base is None or not self.base.discrete or not self.discrete:
                raise DomainMismatch("filtered kernels need a discrete-time base kernel")
            if self.horizon is None or self.horizon < 1:
                raise ValueError("filtered kernels need horizon >= 1")
            _need(h, "rho0", "theta0")
        elif k == Kind.FROM_GPSD:
            if not isinstance(self.gpsd, (ContinuousGpsd, DiscreteGpsd)):
                raise TypeError("FromGpsd needs a ContinuousGpsd or DiscreteGpsd payload")
            if isinstance(self.gpsd, DiscreteGpsd) and not self.discrete:
                raise DomainMismatch("a discrete GPSD defines a discrete-time kernel")
        elif k == Kind.FROM_FEATURES:
            if self.expansion is None:
                raise TypeError("FromFeatures needs an expansion payload")
            if self.expansion.time_domain != self.time_domain:
                raise DomainMismatch("expansion and kernel time domains differ")

    # convenience ---------------------------------------------------------
    def with_hyper(self, **changes):
        return replace(self, hyper=self.hyper.replace(**changes))

    def __call__(self, t, s):
        return eval_kernel(self, t, s)

    def gram(self, indices):
        return gram(self, indices)

    # decay coordinates ---------------------------------------------------
    def _a0(self):
        h = self.hyper
        return math.log(h.lambda0) if self.discrete else h.alpha0

    def _band(self):
        h = self.hyper
        if self.discrete:
            return math.log(h.lambda_m), math.log(h.lambda_M)
        return h.alpha_min, h.alpha_max

    def psd1(self):
        """Frequency factor of stationary, ECLS and integrated kinds."""
        h = self.hyper
        shape = _SHAPE_OF[self.kind]
        return Psd1d(shape, beta=h.beta, omega0=h.omega0 or 0.0, scale=h.scale)

    def to_config(self):
        cfg = {"kind": self.kind.value, "time_domain": self.time_domain,
               "sampling_time": self.sampling_time, **self.hyper.to_dict()}
        if self.kind == Kind.FILTERED:
            cfg["base"] = self.base.to_config()
            cfg["horizon"] = self.horizon
        if self.kind == Kind.FROM_GPSD:
            cfg["gpsd"] = self.gpsd.to_config() if isinstance(self.gpsd, ContinuousGpsd) else None
            cfg["method"] = self.method
        return cfg

    @classmethod
    def from_config(cls, cfg):
        kind = Kind(cfg["kind"])
        kw = dict(time_domain=cfg.get("time_domain", "discrete"), sampling_time=float(cfg.get("sampling_time", 1.0)))
        hyper = HyperParams.from_dict(cfg)
        if kind == Kind.FILTERED:
            return cls(kind, hyper, base=cls.from_config(cfg["base"]), horizon=int(cfg["horizon"]), **kw)
        if kind == Kind.FROM_GPSD:
            return cls(kind, hyper, gpsd=ContinuousGpsd.from_config(cfg["gpsd"]),
                       method=cfg.get("method", "auto"), **kw)
        if kind == Kind.FROM_FEATURES:
            raise ValueError("FromFeatures kernels are rebuilt from an expansion file, not a config")
        return cls(kind, hyper, **kw)


# ---------------------------------------------------------------------------
# evaluation
# ---------------------------------------------------------------------------


def _check_times(kernel, t):
    try:
        return check_indices(t, discrete=kernel.discrete)
    except DomainMismatch:
        raise
    except (TypeError, ValueError) as exc:
        raise DomainMismatch(str(exc)) from None


def _closed_form(kernel, t, s):
    """Vectorized closed form on broadcast arrays ``t`` and ``s``."""
    k, h = kernel.kind, kernel.hyper
    x = t + s
    tau = t - s
    if k in STATIONARY_KINDS:
        return kernel.psd1().lag_kernel(tau)
    if k in ECLS_KINDS:
        return np.exp(kernel._a0() * x) * kernel.psd1().lag_kernel(tau)
    if k == Kind.DC:
        return h.scale * np.exp(kernel._a0() * x - h.beta * np.abs(tau))
    if k == Kind.TC:
        return h.scale * np.exp(-h.gamma * np.maximum(t, s))
    if k == Kind.SS:
        m = np.maximum(t, s)
        g = h.gamma
        return h.scale * (np.exp(-g * x - g * m) / 2.0 - np.exp(-3.0 * g * m) / 6.0)
    if k in INTEGRATED_KINDS:
        lo, hi = kernel._band()
        return kernel.psd1().lag_kernel(tau) * exp_integral(lo, hi, x)
    if k == Kind.ITC:
        lo, hi = kernel._band()
        # int_{lo/2}^{hi/2} exp(2 a max) da
        return h.scale * exp_integral(0.5 * lo, 0.5 * hi, 2.0 * np.maximum(t, s))
    if k == Kind.ITC_BAR:
        m1 = np.maximum(t, s) + 1.0
        return h.scale * (h.lambda_M ** m1 - h.lambda_m ** m1) / m1
    if k == Kind.FROM_FEATURES:
        from .features import feature_matrix

        tb, sb = np.broadcast_arrays(t, s)
        zt = feature_matrix(kernel.expansion, tb.ravel())
        zs = feature_matrix(kernel.expansion, sb.ravel())
        return h.scale * np.einsum("ij,ij->i", zt, zs).reshape(tb.shape)
    if k == Kind.FROM_GPSD:
        g = kernel.gpsd
        if kernel.method == "auto" and isinstance(g, ContinuousGpsd):
            return h.scale * g.kernel(t, s)
        tb, sb = np.broadcast_arrays(t, s)
        if isinstance(g, DiscreteGpsd):
            return h.scale * kernel_from_discrete_gpsd(g, tb, sb)
        vals = [kernel_from_gpsd_quadrature(g, a, b) for a, b in zip(tb.ravel(), sb.ravel())]
        return h.scale * np.asarray(vals).reshape(tb.shape)
    raise AssertionError(f"no closed form for {k}")


def eval_kernel(kernel, t, s):
    """Kernel value(s) ``K(t, s)``; ``t`` and ``s`` broadcast.

    Raises
    ------
    DomainMismatch
        If indices are not nonnegative integers for a discrete kernel (or
        not nonnegative reals for a continuous one).
    """
    t_arr = _check_times(kernel, t)
    s_arr = _check_times(kernel, s)
    if kernel.kind == Kind.FILTERED:
        tb, sb = np.broadcast_arrays(t_arr, s_arr)
        hor = kernel.horizon
        if np.any(tb > hor) or np.any(sb > hor):
            raise DomainMismatch(f"filtered kernel is realized on indices 0..{hor} only")
        full = np.zeros((hor + 1, hor + 1))
        full[1:, 1:] = _filtered_gram(kernel)
        out = full[tb.astype(int), sb.astype(int)]
    else:
        out = _closed_form(kernel, t_arr, s_arr)
    return float(out) if np.ndim(out) == 0 else out


def _regular_grid(idx):
    if idx.size < 3:
        return None
    step = idx[1] - idx[0]
    if step <= 0 or not np.all(np.diff(idx) == step):
        return None
    return step


def gram(kernel, indices):
    """Symmetric Gram matrix ``G[i, j] = K(indices[i], indices[j])``.

    Equally spaced index sets of lag-structured kernels are assembled from
    the ``2n - 1`` distinct lags and sums, which is exact and much faster than
    elementwise evaluation.
    """
    idx = _check_times(kernel, indices)
    if idx.ndim != 1 or idx.size == 0:
        raise ValueError("indices must be a nonempty 1-D sequence")
    k = kernel.kind
    if k == Kind.FILTERED:
        hor = kernel.horizon
        if np.any(idx > hor):
            raise DomainMismatch(f"filtered kernel is realized on indices 0..{hor} only")
        full = np.zeros((hor + 1, hor + 1))
        full[1:, 1:] = _filtered_gram(kernel)
        ii = idx.astype(int)
        return full[np.ix_(ii, ii)]
    if k == Kind.FROM_FEATURES:
        from .features import feature_matrix

        z = feature_matrix(kernel.expansion, idx)
        return kernel.hyper.scale * (z @ z.T)
    step = _regular_grid(idx)
    separable = k in STATIONARY_KINDS + ECLS_KINDS + INTEGRATED_KINDS + (Kind.DC,)
    if step is not None and separable:
        n = idx.size
        lags = step * np.arange(-(n - 1), n)
        sums = 2.0 * idx[0] + step * np.arange(0, 2 * n - 1)
        zero = np.zeros(1)
        k1 = _closed_form(kernel, lags, zero) if k in STATIONARY_KINDS else None
        if k in STATIONARY_KINDS:
            lag_part, sum_part = k1, np.ones_like(sums)
        elif k == Kind.DC:
            h = kernel.hyper
            lag_part = h.scale * np.exp(-h.beta * np.abs(lags))
            sum_part = np.exp(kernel._a0() * sums)
        else:
            lag_part = kernel.psd1().lag_kernel(lags)
            if k in ECLS_KINDS:
                sum_part = np.exp(kernel._a0() * sums)
            else:
                lo, hi = kernel._band()
                sum_part = exp_integral(lo, hi, sums)
        i = np.arange(n)
        G = sum_part[i[:, None] + i[None, :]] * lag_part[(i[:, None] - i[None, :]) + n - 1]
    else:
        G = _closed_form(kernel, idx[:, None], idx[None, :])
    G = np.asarray(G, dtype=float)
    return np.triu(G) + np.triu(G, 1).T


# ---------------------------------------------------------------------------
# filtered kernels
# ---------------------------------------------------------------------------


def filter_impulse(rho0, theta0, n):
    """First ``n`` samples ``f_0..f_{n-1}`` of ``z^2 / ((z - p)(z - conj(p)))``."""
    if not 0.0 <= rho0 < 1.0:
        raise InvalidFilterPole(f"filter pole radius must lie in [0, 1), got {rho0}")
    n = int(n)
    f = np.zeros(n)
    if n == 0:
        return f
    a1 = 2.0 * rho0 * math.cos(theta0)
    a2 = rho0 * rho0
    f[0] = 1.0
    if n > 1:
        f[1] = a1
    for t in range(2, n):
        f[t] = a1 * f[t - 1] - a2 * f[t - 2]
    return f


def filtered_kernel(base, rho0, theta0, horizon):
    """Kernel of ``base``-distributed noise passed through the resonant filter.

    The Gram on ``1..horizon`` is ``L G_base L^T`` with ``L`` the lower
    triangular Toeplitz matrix of the filter impulse response.
    """
    if not 0.0 <= rho0 < 1.0:
        raise InvalidFilterPole(f"filter pole radius must lie in [0, 1), got {rho0}")
    hyper = HyperParams(rho0=float(rho0), theta0=float(theta0))
    return KernelModel(Kind.FILTERED, hyper, time_domain="discrete", base=base, horizon=int(horizon))


def _filtered_gram(kernel):
    from scipy.linalg import toeplitz

    hor = kernel.horizon
    f = filter_impulse(kernel.hyper.rho0, kernel.hyper.theta0, hor)
    L = toeplitz(f, np.zeros(hor))
    G = gram(kernel.base, np.arange(1, hor + 1))
    out = kernel.hyper.scale * (L @ G @ L.T)
    return 0.5 * (out + out.T)


# ---------------------------------------------------------------------------
# discrete PSD of the stationary part
# ---------------------------------------------------------------------------


def ecls_decomposition(kernel):
    """Split ``K(t, s) = lambda0^(t + s) K1(t - s)`` for a discrete ECLS kernel.

    Returns
    -------
    lambda0 : float
    k1 : callable
        Lag kernel, vectorized over integer lags.
    """
    if not kernel.discrete:
        raise DomainMismatch("ECLS decomposition is defined here for discrete-time kernels")
    k, h = kernel.kind, kernel.hyper
    if k in STATIONARY_KINDS:
        return 1.0, kernel.psd1().lag_kernel
    if k in ECLS_KINDS:
        return h.lambda0, kernel.psd1().lag_kernel
    if k == Kind.DC:
        return h.lambda0, lambda tau: h.scale * np.exp(-h.beta * np.abs(np.asarray(tau, dtype=float)))
    if k == Kind.TC:
        g = h.gamma
        return math.exp(-g / 2.0), lambda tau: h.scale * np.exp(-0.5 * g * np.abs(np.asarray(tau, dtype=float)))
    if k == Kind.SS:
        g = h.gamma

        def k1(tau):
            a = np.abs(np.asarray(tau, dtype=float))
            return h.scale * (np.exp(-0.5 * g * a) / 2.0 - np.exp(-1.5 * g * a) / 6.0)

        return math.exp(-1.5 * g), k1
    raise ValueError(f"kernel kind {k.value} is not of ECLS form")


@dataclass(frozen=True, eq=False)
class DiscretePsd:
    """PSD ``phi1(theta)`` of a lag kernel on the integers.

    Normalized so that ``K1(m) = 1/2 int_{-pi}^{pi} phi1(theta) cos(theta m) d theta``.
    ``clipped`` records whether negative truncation ripple beyond ``1e-8``
    had to be clipped to zero on the last evaluation grid.
    """

    k1: Any
    truncation: Optional[int]
    exact: Optional[Psd1d] = None
    clipped: bool = False

    def __call__(self, theta):
        theta = np.asarray(theta, dtype=float)
        if self.exact is not None:
            return self.exact.periodized(theta, 1.0, None)
        lags = np.arange(1, self.truncation + 1)
        vals = self.k1(lags)
        raw = (self.k1(0.0) + 2.0 * (np.cos(theta[..., None] * lags) * vals).sum(axis=-1)) / np.pi
        if np.min(raw, initial=0.0) < -1e-8:
            object.__setattr__(self, "clipped", True)
        return np.maximum(raw, 0.0)


def stationary_psd_discrete(kernel, truncation=None, *, tol=1e-12):
    """Discrete PSD ``(1/pi) sum_tau K1(tau) exp(-j theta tau)`` of an ECLS kernel.

    With ``truncation=None`` the built-in Laplacian, Cauchy and Gaussian
    shapes use the exact alias sum of their continuous PSD, equal to the
    infinite lag series.  Otherwise the lag series is summed up to
    ``truncation`` and the neglected tail must be below ``tol``.

    Raises
    ------
    TruncationInsufficient
        If ``|K1(tau)| >= tol`` somewhere just beyond the truncation.
    """
    _, k1 = ecls_decomposition(kernel)
    if truncation is None:
        if kernel.kind in STATIONARY_KINDS + ECLS_KINDS:
            return DiscretePsd(k1, None, exact=kernel.psd1())
        if kernel.kind in (Kind.DC, Kind.TC):
            h = kernel.hyper
            beta = h.beta if kernel.kind == Kind.DC else 0.5 * h.gamma
            return DiscretePsd(k1, None, exact=Psd1d.laplacian(beta, 0.0, h.scale))
        truncation = _auto_truncation(k1, tol)
    truncation = int(check_scalar(truncation, "truncation", lower=0, integer=True))
    probe = np.arange(truncation + 1, 2 * truncation + 65)
    if np.max(np.abs(k1(probe))) >= tol * max(1.0, abs(float(k1(0.0)))):
        raise TruncationInsufficient(f"lag kernel is not below {tol:g} beyond truncation {truncation}")
    return DiscretePsd(k1, truncation)


def _auto_truncation(k1, tol):
    trunc = 16
    ref = max(1.0, abs(float(k1(0.0))))
    while trunc < 1 << 22:
        probe = np.arange(trunc + 1, 2 * trunc + 65)
        if np.max(np.abs(k1(probe))) < tol * ref:
            return trunc
        trunc *= 2
    raise TruncationInsufficient("lag kernel decays too slowly for a truncated series")


# ---------------------------------------------------------------------------
# kernel -> GPSD
# ---------------------------------------------------------------------------


def kernel_to_gpsd(kernel):
    """Continuous GPSD whose harmonic representation gives ``kernel``.

    For discrete kernels the GPSD is continuous with unit sampling time, so
    that sampling its kernel at integer times reproduces ``kernel`` exactly;
    ``discretize(kernel_to_gpsd(k), 1.0, None)`` is its discrete GPSD.
    """
    k, h = kernel.kind, kernel.hyper
    if k in STATIONARY_KINDS:
        return ContinuousGpsd.stationary(kernel.psd1())
    if k in ECLS_KINDS:
        return ContinuousGpsd.ecls(kernel._a0(), kernel.psd1())
    if k == Kind.DC:
        return ContinuousGpsd.ecls(kernel._a0(), Psd1d.laplacian(h.beta, 0.0, h.scale))
    if k == Kind.TC:
        return ContinuousGpsd.ecls(-0.5 * h.gamma, Psd1d.laplacian(0.5 * h.gamma, 0.0, h.scale))
    if k in INTEGRATED_KINDS:
        lo, hi = kernel._band()
        return ContinuousGpsd.boxcar(lo, hi, kernel.psd1())
    if k == Kind.ITC:
        lo, hi = kernel._band()
        # bandwidth -alpha with the Lorentzian at zero: lag kernel exp(alpha |tau|)
        return ContinuousGpsd.boxcar_warped(0.5 * lo, 0.5 * hi, Psd1d.laplacian_at_zero(1.0, scale=h.scale))
    if k == Kind.FROM_GPSD and isinstance(kernel.gpsd, ContinuousGpsd):
        return kernel.gpsd.scaled(h.scale)
    raise ValueError(f"kernel kind {k.value} has no built-in GPSD")
