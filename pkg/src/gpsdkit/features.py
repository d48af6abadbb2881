"""Finite feature expansions approximating GPSD-defined kernels.

An expansion is a list of atoms ``(decay, frequency, weight)`` and induces

    K_a(t, s) = 1/2 sum_i w_i exp(alpha_i (t + s)) cos(omega_i (t - s)) = z(t)^T z(s)

with ``z(t)`` stacking ``sqrt(w_i / 2) exp(alpha_i t) [cos(omega_i t), sin(omega_i t)]``.
Discrete-time expansions store radii ``lambda_i = exp(alpha_i T)`` and angles
``theta_i`` in ``[0, pi]``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Optional

import numpy as np

from ._validation import check_indices, check_scalar
from .exceptions import DomainMismatch
from .gpsd import ContinuousGpsd, DiscreteGpsd, total_power

__all__ = [
    "FeatureExpansion",
    "feature_vector",
    "feature_matrix",
    "grid_expansion",
    "random_expansion",
    "approx_error",
    "expansion_gram",
    "save_expansion",
    "load_expansion",
]


@dataclass(frozen=True, eq=False)
class FeatureExpansion:
    """Atoms of a low-rank kernel approximation.

    Attributes
    ----------
    decay : ndarray
        ``alpha_i <= 0`` (continuous) or ``lambda_i`` in ``[0, 1]`` (discrete).
    freq : ndarray
        ``omega_i >= 0`` (continuous) or ``theta_i`` in ``[0, pi]`` (discrete).
    weight : ndarray
        Nonnegative atom weights ``phi_i``.
    mode : {"grid", "random"}
    time_domain : {"continuous", "discrete"}
    """

    decay: np.ndarray
    freq: np.ndarray
    weight: np.ndarray
    mode: str = "grid"
    time_domain: str = "discrete"
    seed: Optional[int] = None
    num_samples: Optional[int] = None

    def __post_init__(self):
        d = np.atleast_1d(np.asarray(self.decay, dtype=float))
        f = np.atleast_1d(np.asarray(self.freq, dtype=float))
        w = np.atleast_1d(np.asarray(self.weight, dtype=float))
        if not (d.shape == f.shape == w.shape) or d.ndim != 1 or d.size == 0:
            raise ValueError("decay, freq and weight must be nonempty 1-D arrays of equal length")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("atom weights must be finite and nonnegative")
        if self.time_domain == "discrete":
            if np.any((d < 0) | (d > 1)):
                raise ValueError("discrete atom radii must lie in [0, 1]")
            if np.any((f < 0) | (f > np.pi + 1e-12)):
                raise ValueError("discrete atom angles must lie in [0, pi]")
        elif self.time_domain == "continuous":
            if np.any(d > 0):
                raise ValueError("continuous atom decay rates must be <= 0")
        else:
            raise ValueError("time_domain must be 'discrete' or 'continuous'")
        if self.mode not in ("grid", "random"):
            raise ValueError("mode must be 'grid' or 'random'")
        for name, arr in (("decay", d), ("freq", f), ("weight", w)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def n_atoms(self):
        return self.weight.size

    @property
    def dim(self):
        return 2 * self.n_atoms

    def total_weight(self):
        return float(self.weight.sum())

    def metadata(self):
        return {"mode": self.mode, "seed": self.seed, "num_samples": self.num_samples,
                "time_domain": self.time_domain}


def feature_matrix(expansion, indices):
    """Rows ``z(t)`` for each ``t`` in ``indices``; shape ``(len(indices), 2 * n_atoms)``.

    Columns are interleaved per atom: ``[cos_1, sin_1, cos_2, sin_2, ...]``.
    """
    t = check_indices(indices, discrete=expansion.time_domain == "discrete")
    t = np.atleast_1d(t)[:, None]
    amp = np.sqrt(0.5 * expansion.weight)
    if expansion.time_domain == "discrete":
        env = np.power(expansion.decay, t)
    else:
        env = np.exp(expansion.decay * t)
    arg = expansion.freq * t
    out = np.empty((t.shape[0], expansion.dim))
    out[:, 0::2] = amp * env * np.cos(arg)
    out[:, 1::2] = amp * env * np.sin(arg)
    return out


def feature_vector(expansion, t):
    """Feature vector ``z(t)`` of length ``2 * n_atoms``."""
    return feature_matrix(expansion, [t])[0]


def expansion_gram(expansion, indices):
    z = feature_matrix(expansion, indices)
    return z @ z.T


def _to_discrete_atoms(alpha, omega, T):
    lam = np.exp(alpha * T)
    theta = np.mod(omega * T, 2.0 * np.pi)
    # cos(theta (t - s)) is unchanged by theta -> 2 pi - theta
    theta = np.where(theta > np.pi, 2.0 * np.pi - theta, theta)
    return lam, theta


def _unpack(gpsd):
    if isinstance(gpsd, DiscreteGpsd):
        if gpsd.source is None:
            return None, gpsd
        return gpsd.source, gpsd
    if isinstance(gpsd, ContinuousGpsd):
        return gpsd, None
    raise TypeError("expected a ContinuousGpsd or DiscreteGpsd")


def _alpha_cells(src, n_alpha):
    """Nodes and cell masses along the decay axis."""
    if src.dirac_alpha is not None:
        return np.array([src.dirac_alpha]), np.array([1.0]), np.array([np.nan])
    lo, hi = src.alpha_support
    edges = np.linspace(lo, hi, n_alpha + 1)
    nodes = 0.5 * (edges[:-1] + edges[1:])
    if src.family == "separable":
        fine = [np.linspace(a, b, 65) for a, b in zip(edges[:-1], edges[1:])]
        mass = np.array([np.trapezoid(src.decay(x), x) for x in fine])
    else:
        mass = np.diff(edges)
    return nodes, mass, np.diff(edges)


def _circle_theta_cells(dg, n_omega, weighting):
    grid = np.linspace(0.0, np.pi, 8193)
    dens = 2.0 * dg.theta_density(grid)
    cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
    total = cum[-1]
    q = (np.arange(1, n_omega + 1) - 0.5) / n_omega
    nodes = np.interp(q * total, cum, grid)
    if weighting == "cell":
        return nodes, np.full(n_omega, total / n_omega)
    edges = _midpoint_edges(nodes)
    return nodes, np.diff(edges) * 2.0 * dg.theta_density(nodes)


def _midpoint_edges(nodes):
    inner = 0.5 * (nodes[1:] + nodes[:-1])
    last = nodes[-1] + (nodes[-1] - (inner[-1] if inner.size else 0.0))
    return np.concatenate([[0.0], inner, [last]])


def grid_expansion(gpsd, n_alpha, n_omega, *, weighting="cell", mass_tol=1e-10):
    """Deterministic grid expansion of a GPSD.

    Decay nodes sit at the midpoints of ``n_alpha`` equal cells of the decay
    support (a single node at a Dirac).  Frequency nodes sit at the
    ``(k - 1/2) / n_omega`` quantiles of ``|omega|`` under the normalized
    frequency factor.

    Parameters
    ----------
    weighting : {"cell", "midpoint"}
        ``"cell"`` gives each atom the exact GPSD mass of its cell, mirrored
        half included, so ``sum(weights) == 2 K(0, 0)`` at every resolution.
        ``"midpoint"`` uses ``2 dalpha domega phi(alpha_i, omega_k)``.

    Raises
    ------
    UnboundedSupport
        If spectral mass cannot be bracketed at the ``mass_tol`` level.
    """
    n_alpha = check_scalar(n_alpha, "n_alpha", lower=1, integer=True)
    n_omega = check_scalar(n_omega, "n_omega", lower=1, integer=True)
    if weighting not in ("cell", "midpoint"):
        raise ValueError("weighting must be 'cell' or 'midpoint'")
    src, dg = _unpack(gpsd)
    discrete = dg is not None
    if src is None:
        theta, w = _circle_theta_cells(dg, n_omega, weighting)
        lam = np.full(n_omega, dg.circle_lambda)
        return FeatureExpansion(lam, theta, w, mode="grid", time_domain="discrete")

    a_nodes, a_mass, a_width = _alpha_cells(src, n_alpha)
    q = (np.arange(1, n_omega + 1) - 0.5) / n_omega
    alphas, omegas, weights = [], [], []
    cache = {}
    for a, am, aw in zip(a_nodes, a_mass, a_width):
        key = a if src.family == "boxcar_warped" else None
        if key not in cache:
            psd = src.psd_at(a)
            psd.support_bracket(mass_tol)
            cache[key] = (psd, psd.folded_ppf(q), psd.mass())
        psd, nodes, mass = cache[key]
        if weighting == "cell":
            w = np.full(n_omega, am * mass / n_omega)
        else:
            dens_a = 1.0 if src.dirac_alpha is not None else aw * float(src.decay_weight(a))
            w = dens_a * np.diff(_midpoint_edges(nodes)) * 2.0 * psd(nodes)
        alphas.append(np.full(n_omega, a))
        omegas.append(nodes)
        weights.append(w)
    alpha = np.concatenate(alphas)
    omega = np.concatenate(omegas)
    weight = np.concatenate(weights)
    if not discrete:
        return FeatureExpansion(alpha, omega, weight, mode="grid", time_domain="continuous")
    lam, theta = _to_discrete_atoms(alpha, omega, dg.sampling_time)
    return FeatureExpansion(lam, theta, weight, mode="grid", time_domain="discrete")


def random_expansion(gpsd, num_samples, seed):
    """Random-feature expansion: i.i.d. atoms from ``phi / int int phi``.

    Each of the ``num_samples`` atoms has weight ``2 K(0, 0) / num_samples``,
    so ``E[K_a(t, s)] = K(t, s)`` and ``K_a(0, 0) = K(0, 0)`` exactly.

    Raises
    ------
    SamplerNotAvailable
        For tabulated densities built without an inverse-CDF table.
    """
    num_samples = check_scalar(num_samples, "num_samples", lower=1, integer=True)
    rng = np.random.default_rng(seed)
    src, dg = _unpack(gpsd)
    if src is None:
        grid = np.linspace(0.0, np.pi, 8193)
        dens = dg.theta_density(grid)
        cum = np.concatenate([[0.0], np.cumsum(0.5 * (dens[1:] + dens[:-1]) * np.diff(grid))])
        theta = np.interp(rng.uniform(size=num_samples) * cum[-1], cum, grid)
        k00 = total_power(dg)
        return FeatureExpansion(np.full(num_samples, dg.circle_lambda), theta,
                                np.full(num_samples, 2.0 * k00 / num_samples),
                                mode="random", time_domain="discrete", seed=seed, num_samples=num_samples)
    if src.dirac_alpha is not None:
        alpha = np.full(num_samples, src.dirac_alpha)
    elif src.family == "separable":
        alpha = src.decay.sample(rng, num_samples)
    else:
        alpha = rng.uniform(src.alpha_min, src.alpha_max, num_samples)
    if src.family == "boxcar_warped":
        omega = np.array([src.psd_at(a).sample_folded(rng, 1)[0] for a in alpha])
    else:
        omega = src.psd1.sample_folded(rng, num_samples)
    weight = np.full(num_samples, src.mass() / num_samples)
    meta = dict(mode="random", seed=seed, num_samples=num_samples)
    if dg is None:
        return FeatureExpansion(alpha, omega, weight, time_domain="continuous", **meta)
    lam, theta = _to_discrete_atoms(alpha, omega, dg.sampling_time)
    return FeatureExpansion(lam, theta, weight, time_domain="discrete", **meta)


def approx_error(expansion, kernel, indices):
    """Largest absolute entrywise difference between feature and exact Gram.

    Raises
    ------
    DomainMismatch
        If the expansion and kernel live on different time domains.
    """
    from .kernels import gram

    if expansion.time_domain != kernel.time_domain:
        raise DomainMismatch("expansion and kernel time domains differ")
    return float(np.max(np.abs(expansion_gram(expansion, indices) - gram(kernel, indices))))


def save_expansion(expansion, path):
    """Write atoms as CSV ``decay,freq,weight`` and metadata to ``<path>.json``."""
    from .io import atomic_write_text, format_csv

    rows = np.column_stack([expansion.decay, expansion.freq, expansion.weight])
    dec = "lambda" if expansion.time_domain == "discrete" else "alpha"
    frq = "theta" if expansion.time_domain == "discrete" else "omega"
    atomic_write_text(path, format_csv([dec, frq, "weight"], rows))
    atomic_write_text(str(path) + ".json", json.dumps(expansion.metadata(), indent=2, sort_keys=True))


def load_expansion(path):
    from .io import read_csv_columns

    cols = read_csv_columns(path)
    names = list(cols)
    with open(str(path) + ".json") as fh:
        meta = json.load(fh)
    return FeatureExpansion(cols[names[0]], cols[names[1]], cols[names[2]], mode=meta["mode"],
                            time_domain=meta["time_domain"], seed=meta.get("seed"),
                            num_samples=meta.get("num_samples"))
