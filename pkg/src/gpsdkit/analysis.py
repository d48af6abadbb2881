"""Diagnostics: prior densities over second-order systems and modulated transforms."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import linalg

from ._validation import check_scalar
from .exceptions import DivergentModulation, InvalidPole
from .regression import cholesky_with_jitter

__all__ = [
    "second_order_impulse",
    "prior_logpdf",
    "PoleGrid",
    "pole_density_map",
    "default_pole_axes",
    "modulated_dtft",
    "dtft",
    "gpsd_figure_grid",
]


def second_order_impulse(p, n):
    """Strictly causal impulse response ``rho^(t-1) sin(t theta) / sin(theta)``, ``t = 1..n``.

    ``p = rho exp(j theta)`` is the upper pole of ``z / ((z - p)(z - conj(p)))``.
    Near ``theta = 0`` or ``pi`` the ratio of sines is taken from its series.

    Raises
    ------
    InvalidPole
        Unless ``|p| < 1`` and ``0 < arg(p) < pi``.
    """
    p = complex(p)
    rho, theta = abs(p), math.atan2(p.imag, p.real)
    if not (rho < 1.0 and 0.0 < theta < math.pi):
        raise InvalidPole(f"pole {p} outside the class |p| < 1, 0 < arg p < pi")
    n = check_scalar(n, "n", lower=1, integer=True)
    t = np.arange(1, n + 1, dtype=float)
    s = math.sin(theta)
    if s >= 1e-8:
        ratio = np.sin(t * theta) / s
    elif theta < 0.5 * math.pi:
        ratio = t - t * (t * t - 1.0) * theta * theta / 6.0
    else:
        d = math.pi - theta
        ratio = (-1.0) ** (t - 1) * (t - t * (t * t - 1.0) * d * d / 6.0)
    return rho ** (t - 1) * ratio


def _as_gram(kernel, n):
    if isinstance(kernel, np.ndarray):
        return kernel
    from .kernels import gram

    return gram(kernel, np.arange(1, n + 1))


def prior_logpdf(kernel, g):
    """Unnormalized Gaussian log-density ``-1/2 g^T K^-1 g`` of ``g(1..n)``."""
    g = np.asarray(g, dtype=float)
    K = _as_gram(kernel, g.size)
    if K.shape != (g.size, g.size):
        raise ValueError("Gram matrix and impulse response sizes differ")
    L, _ = cholesky_with_jitter(K)
    z = linalg.solve_triangular(L, g, lower=True, check_finite=False)
    return -0.5 * float(z @ z)


def _cell_widths(x):
    x = np.asarray(x, dtype=float)
    if x.size == 1:
        return np.ones(1)
    mid = 0.5 * (x[1:] + x[:-1])
    edges = np.concatenate([[x[0] - (mid[0] - x[0])], mid, [x[-1] + (x[-1] - mid[-1])]])
    return np.diff(edges)


@dataclass(frozen=True, eq=False)
class PoleGrid:
    """Prior density over poles ``p = magnitude * exp(j phase)``.

    ``log_density`` and ``density`` have shape ``(len(magnitudes), len(phases))``;
    ``density`` integrates to one over the grid cells.
    """

    magnitudes: np.ndarray
    phases: np.ndarray
    log_density: np.ndarray
    density: np.ndarray

    @property
    def cell_area(self):
        return np.outer(_cell_widths(self.magnitudes), _cell_widths(self.phases))

    def argmax(self):
        i, j = np.unravel_index(np.argmax(self.log_density), self.log_density.shape)
        return float(self.magnitudes[i]), float(self.phases[j])

    def argmax_pole(self):
        r, th = self.argmax()
        return r * np.exp(1j * th)

    def phase_marginal(self):
        return (self.density * _cell_widths(self.magnitudes)[:, None]).sum(axis=0)

    def phase_interval(self, mass=0.9):
        """Central phase interval holding ``mass`` of the marginal."""
        marg = self.phase_marginal() * _cell_widths(self.phases)
        cum = np.cumsum(marg)
        cum = cum / cum[-1]
        lo_q, hi_q = 0.5 * (1.0 - mass), 0.5 * (1.0 + mass)
        return float(np.interp(lo_q, cum, self.phases)), float(np.interp(hi_q, cum, self.phases))

    def phase_spread(self, mass=0.9):
        lo, hi = self.phase_interval(mass)
        return hi - lo

    def annulus_mass(self, r_lo, r_hi):
        sel = (self.magnitudes >= r_lo) & (self.magnitudes <= r_hi)
        return float((self.density * self.cell_area)[sel].sum())

    def rows(self, which="density"):
        vals = self.density if which == "density" else self.log_density
        R, TH = np.meshgrid(self.magnitudes, self.phases, indexing="ij")
        return np.column_stack([R.ravel(), TH.ravel(), vals.ravel()])


def default_pole_axes(n_mag=60, n_phase=60):
    """Cell-centred axes on ``(0, 1) x (0, pi)``."""
    mags = (np.arange(n_mag) + 0.5) / n_mag
    phases = (np.arange(n_phase) + 0.5) * np.pi / n_phase
    return mags, phases


def pole_density_map(kernel, mag_grid=None, phase_grid=None, n=100):
    """Prior density of the second-order class on a pole grid.

    Every grid pole ``p`` is scored by ``-1/2 g_p^T K^-1 g_p`` with
    ``g_p = second_order_impulse(p, n)``; scores are exponentiated after
    subtracting their maximum and normalized over the grid cells.
    """
    if mag_grid is None or phase_grid is None:
        dm, dp = default_pole_axes()
        mag_grid = dm if mag_grid is None else mag_grid
        phase_grid = dp if phase_grid is None else phase_grid
    mags = np.asarray(mag_grid, dtype=float)
    phases = np.asarray(phase_grid, dtype=float)
    K = _as_gram(kernel, n)
    L, _ = cholesky_with_jitter(K)
    logd = np.empty((mags.size, phases.size))
    for i, r in enumerate(mags):
        G = np.stack([second_order_impulse(r * np.exp(1j * th), n) for th in phases], axis=1)
        Z = linalg.solve_triangular(L, G, lower=True, check_finite=False)
        logd[i] = -0.5 * np.einsum("ij,ij->j", Z, Z)
    dens = np.exp(logd - logd.max())
    area = np.outer(_cell_widths(mags), _cell_widths(phases))
    dens = dens / float((dens * area).sum())
    return PoleGrid(mags, phases, logd, dens)


def modulated_dtft(g, lambda0, theta_grid, *, check=True):
    """Truncated transform ``sum_t pi^-1 lambda0^-t g(t) exp(-j theta t)``, ``t = 1..n``.

    Raises
    ------
    DivergentModulation
        If the modulated sequence's last-decade norm exceeds its first-decade
        norm, i.e. the response decays no faster than ``lambda0^t``.
    """
    g = np.asarray(g, dtype=float)
    lambda0 = check_scalar(lambda0, "lambda0", lower=0.0, upper=1.0, closed="neither")
    t = np.arange(1, g.size + 1)
    seq = g * np.exp(-t * math.log(lambda0)) / np.pi
    if check:
        dec = max(1, g.size // 10)
        first = np.linalg.norm(seq[:dec])
        last = np.linalg.norm(seq[-dec:])
        if last > first * (1.0 + 1e-9):
            raise DivergentModulation(
                f"modulated sequence grows (last-decade norm {last:.3g} > first-decade norm {first:.3g})")
    theta = np.asarray(theta_grid, dtype=float)
    return np.exp(-1j * np.outer(theta, t)) @ seq


def dtft(g, theta_grid):
    """Frequency response ``G(exp(j theta)) = sum_t g(t) exp(-j theta t)``, ``t = 1..n``."""
    g = np.asarray(g, dtype=float)
    t = np.arange(1, g.size + 1)
    return np.exp(-1j * np.outer(np.asarray(theta_grid, dtype=float), t)) @ g


def gpsd_figure_grid(dgpsd, lambda_grid, theta_grid):
    """Matrix of ``phi_d(lambda_i, theta_j)`` for heatmaps.

    A Dirac decay factor is drawn on the grid row nearest ``lambda0`` (when
    ``lambda0`` lies within half a row spacing of the grid), with its
    angular density as values; all other rows are zero.
    """
    lam = np.asarray(lambda_grid, dtype=float)
    th = np.asarray(theta_grid, dtype=float)
    out = np.zeros((lam.size, th.size))
    lam0 = dgpsd.dirac_lambda
    if lam0 is not None:
        widths = _cell_widths(lam)
        i = int(np.argmin(np.abs(lam - lam0)))
        if abs(lam[i] - lam0) <= 0.5 * widths[i] + 1e-15:
            out[i] = dgpsd.theta_density(th)
        return out
    for i, lv in enumerate(lam):
        out[i] = dgpsd.eval(np.full(th.size, lv), th)
    return out
