"""Experimental protocol: random systems, data synthesis, scoring and benchmarks."""

from __future__ import annotations

import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np
from scipy import signal

from ._validation import check_scalar
from .exceptions import DegenerateTruth, GpsdkitError, UnstableSystem
from .regression import DataRecord, KernelTemplate, OptBudget, fit_hyperparameters, posterior

__all__ = [
    "SystemSpec",
    "random_system",
    "simulate",
    "noiseless_output",
    "true_impulse",
    "average_fit",
    "EstimatorSpec",
    "ESTIMATORS",
    "estimator_template",
    "ExperimentConfig",
    "run_system",
    "run_benchmark",
    "summarize",
    "demo_system",
    "DemoConfig",
    "demo_templates",
    "run_demo",
]


@dataclass(frozen=True, eq=False)
class SystemSpec:
    """Rational transfer function ``gain * prod(z - zeros) / prod(z - poles)``.

    The relative degree sets the input delay: the random benchmark systems
    have ``order - 1`` zeros and are therefore strictly proper.
    """

    poles: np.ndarray
    zeros: np.ndarray
    gain: float = 1.0

    def __post_init__(self):
        poles = np.atleast_1d(np.asarray(self.poles, dtype=complex))
        zeros = np.atleast_1d(np.asarray(self.zeros, dtype=complex))
        if poles.size and np.max(np.abs(poles)) >= 1.0:
            raise UnstableSystem("all poles must lie strictly inside the unit disc")
        for name, arr in (("poles", poles), ("zeros", zeros)):
            if not _conjugate_closed(arr):
                raise ValueError(f"{name} must be closed under complex conjugation")
        if zeros.size > poles.size:
            raise ValueError("improper transfer function: more zeros than poles")
        object.__setattr__(self, "poles", poles)
        object.__setattr__(self, "zeros", zeros)
        object.__setattr__(self, "gain", float(self.gain))

    @property
    def order(self):
        return self.poles.size

    def tf(self):
        """Coefficients ``(b, a)`` in powers of ``z^-1``."""
        a = np.real(np.poly(self.poles)) if self.poles.size else np.ones(1)
        num = np.real(np.poly(self.zeros)) if self.zeros.size else np.ones(1)
        b = np.concatenate([np.zeros(self.poles.size - self.zeros.size), self.gain * num])
        return b, a

    def to_dict(self):
        return {"poles_re": self.poles.real.tolist(), "poles_im": self.poles.imag.tolist(),
                "zeros_re": self.zeros.real.tolist(), "zeros_im": self.zeros.imag.tolist(),
                "gain": self.gain}


def _conjugate_closed(arr, tol=1e-12):
    remaining = list(arr)
    while remaining:
        z = remaining.pop()
        if abs(z.imag) <= tol:
            continue
        d = [abs(w - np.conj(z)) for w in remaining]
        if not d or min(d) > 1e-9:
            return False
        remaining.pop(int(np.argmin(d)))
    return True


def _disc_pairs(rng, count, radius=0.95):
    """``count`` conjugate pairs, area-uniform in the disc of ``radius``."""
    r = radius * np.sqrt(rng.uniform(size=count))
    ph = rng.uniform(0.0, np.pi, size=count)
    p = r * np.exp(1j * ph)
    return np.concatenate([p, np.conj(p)])


def _fill(rng, total, radius=0.95):
    pairs, single = divmod(total, 2)
    out = _disc_pairs(rng, pairs, radius)
    if single:
        out = np.concatenate([out, [complex(rng.uniform(-radius, radius))]])
    return out


def random_system(seed, order=30, *, clustered_fraction=0.75, n_norm=100, radius=0.95):
    """Random stable system following the clustered-pole protocol.

    ``round(clustered_fraction * order / 2)`` conjugate pole pairs share a
    phase window of width ``pi/6`` centred at ``theta0 ~ U[pi/4, 3pi/4]``
    with magnitudes ``U[0.8, 0.95]``; the remaining poles (and ``order - 1``
    zeros) are area-uniform in the disc of radius 0.95.  The gain makes the
    first ``n_norm`` impulse-response samples unit-norm.
    """
    order = check_scalar(order, "order", lower=1, integer=True)
    rng = np.random.default_rng(seed)
    n_cl = int(round(clustered_fraction * order / 2.0))
    n_cl = min(n_cl, order // 2)
    theta0 = rng.uniform(np.pi / 4, 3 * np.pi / 4)
    ph = rng.uniform(theta0 - np.pi / 12, theta0 + np.pi / 12, size=n_cl)
    mag = rng.uniform(0.8, 0.95, size=n_cl)
    cl = mag * np.exp(1j * ph)
    poles = np.concatenate([cl, np.conj(cl), _fill(rng, order - 2 * n_cl, radius)])
    zeros = _fill(rng, order - 1, radius)
    sys1 = SystemSpec(poles, zeros, 1.0)
    g = true_impulse(sys1, n_norm)
    return replace(sys1, gain=1.0 / float(np.linalg.norm(g)))


def _filter(system, x):
    """Second-order-section realization; the relative degree becomes a delay.

    Clustered high-order pole sets make the expanded direct-form polynomial
    ill-conditioned, so the cascade form is used throughout.
    """
    x = np.asarray(x, dtype=float)
    if system.order == 0:
        return system.gain * x
    sos = signal.zpk2sos(system.zeros, system.poles, system.gain)
    delay = system.order - system.zeros.size
    y = signal.sosfilt(sos, x)
    return np.concatenate([np.zeros(min(delay, y.size)), y[: max(y.size - delay, 0)]])


def noiseless_output(system, u):
    """Output of the system for input ``u`` from zero initial state."""
    u = np.asarray(u, dtype=float)
    v = _filter(system, u)
    if not np.all(np.isfinite(v)) or np.linalg.norm(v) > 1e6 * max(np.linalg.norm(u), 1e-300):
        raise UnstableSystem("output norm exceeds 1e6 times the input norm")
    return v


def simulate(system, N, snr, seed):
    """Record of ``N`` samples: white unit-variance input, noise at the given SNR.

    The noise variance is ``var(v) / snr`` for the realized noiseless output
    ``v`` and is stored in the returned record.
    """
    N = check_scalar(N, "N", lower=1, integer=True)
    snr = check_scalar(snr, "snr", lower=0.0, closed="neither")
    rng = np.random.default_rng(seed)
    u = rng.standard_normal(N)
    v = noiseless_output(system, u)
    sigma2 = float(np.var(v)) / snr
    if not sigma2 > 0:
        sigma2 = np.finfo(float).tiny
    y = v + math.sqrt(sigma2) * rng.standard_normal(N)
    return DataRecord(u, y, sigma2)


def true_impulse(system, n, *, start=1):
    """Impulse-response samples ``g(start), ..., g(start + n - 1)``."""
    n = check_scalar(n, "n", lower=1, integer=True)
    delta = np.zeros(n + start)
    delta[0] = 1.0
    return _filter(system, delta)[start:]


def average_fit(g_hat, g_true):
    """``100 (1 - ||g_hat - g|| / ||g - mean(g)||)``.

    Raises
    ------
    DegenerateTruth
        If the true response is constant.
    """
    g_hat = np.asarray(g_hat, dtype=float)
    g_true = np.asarray(g_true, dtype=float)
    if g_hat.shape != g_true.shape:
        raise ValueError("estimate and truth must have equal length")
    den = float(np.sum((g_true - g_true.mean()) ** 2))
    if den == 0.0:
        raise DegenerateTruth("true impulse response is constant")
    return 100.0 * (1.0 - math.sqrt(float(np.sum((g_hat - g_true) ** 2)) / den))


# ---------------------------------------------------------------------------
# estimators and benchmark
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class EstimatorSpec:
    """Integrated kernel of a given shape, exact or grid-approximated."""

    name: str
    shape: str
    free_omega0: bool
    approx: bool


_SHAPE_KIND = {"laplacian": "IntegratedL", "cauchy": "IntegratedC", "gaussian": "IntegratedG"}
ESTIMATORS = {}
for _letter, _shape in (("L", "laplacian"), ("G", "gaussian"), ("C", "cauchy")):
    for _zero in (True, False):
        for _apx in (False, True):
            _nm = _letter + ("0" if _zero else "") + ("A" if _apx else "")
            ESTIMATORS[_nm] = EstimatorSpec(_nm, _shape, not _zero, _apx)

DEFAULT_BOUNDS = {
    "beta": (1e-3, 10.0),
    "omega0": (0.0, math.pi),
    "lambda_m": (0.01, 0.995),
    "lambda_M": (0.01, 0.995),
    "scale": (1e-3, 1e3),
}


def estimator_template(spec, *, approx=(3, 5), bounds=None):
    """Kernel template of a benchmark estimator."""
    from .kernels import HyperParams, KernelModel

    b = dict(DEFAULT_BOUNDS, **(bounds or {}))
    base = KernelModel(_SHAPE_KIND[spec.shape], HyperParams(beta=0.1, omega0=0.0, lambda_m=0.5,
                                                             lambda_M=0.9, scale=1.0))
    free = {k: b[k] for k in ("beta", "lambda_m", "lambda_M", "scale")}
    if spec.free_omega0:
        free["omega0"] = b["omega0"]
    return KernelTemplate.from_kernel(base, free, approx=approx if spec.approx else None)


@dataclass(frozen=True)
class ExperimentConfig:
    """Benchmark protocol and execution settings."""

    num_systems: int = 50
    order: int = 30
    N: int = 230
    n: int = 100
    snr: float = 10.0
    seed: int = 0
    estimators: tuple = tuple(ESTIMATORS)
    n_starts: int = 5
    max_evals: int = 500
    approx: tuple = (3, 5)
    n_jobs: int = 1
    record_timing: bool = False

    def __post_init__(self):
        for name in ("num_systems", "order", "N", "n", "n_starts", "max_evals"):
            check_scalar(getattr(self, name), name, lower=1, integer=True)
        check_scalar(self.snr, "snr", lower=0.0, closed="neither")
        unknown = [e for e in self.estimators if e not in ESTIMATORS]
        if unknown:
            raise ValueError(f"unknown estimators: {unknown}")
        object.__setattr__(self, "estimators", tuple(self.estimators))
        object.__setattr__(self, "approx", tuple(int(a) for a in self.approx))

    def budget(self):
        return OptBudget(n_starts=self.n_starts, max_evals=self.max_evals, seed=self.seed)

    def to_dict(self):
        d = asdict(self)
        d["estimators"] = list(self.estimators)
        d["approx"] = list(self.approx)
        return d

    @classmethod
    def from_dict(cls, d):
        kw = {k: v for k, v in d.items() if k in cls.__dataclass_fields__}
        if "estimators" in kw:
            kw["estimators"] = tuple(kw["estimators"])
        if "approx" in kw:
            kw["approx"] = tuple(kw["approx"])
        return cls(**kw)


RESULT_HEADER = ["system_id", "estimator", "AF", "nll", "fit_seconds", "status"]
SUMMARY_HEADER = ["estimator", "q1", "median", "q3", "mean", "failures"]


def _system_seeds(master, count):
    children = np.random.SeedSequence(master).spawn(count)
    return [tuple(int(x) for x in c.generate_state(2)) for c in children]


def run_system(config, system_id):
    """Fit and score every configured estimator on one generated system."""
    sys_seed, data_seed = _system_seeds(config.seed, system_id + 1)[system_id]
    system = random_system(sys_seed, config.order, n_norm=config.n)
    data = simulate(system, config.N, config.snr, data_seed)
    g_true = true_impulse(system, config.n)
    rows = []
    for name in config.estimators:
        spec = ESTIMATORS[name]
        t0 = time.perf_counter()
        try:
            fit = fit_hyperparameters(estimator_template(spec, approx=config.approx), data, config.n,
                                      config.budget())
            est = posterior(fit.model, data, config.n, sigma2=fit.sigma2)
            af = average_fit(est.g_hat, g_true)
            nll, status = fit.nll, "ok"
        except (GpsdkitError, ValueError, np.linalg.LinAlgError) as exc:
            af, nll, status = float("nan"), float("nan"), f"failed:{type(exc).__name__}"
        secs = time.perf_counter() - t0 if config.record_timing else float("nan")
        rows.append([system_id, name, af, nll, secs, status])
    return rows


def _system_file(out_dir, system_id):
    return os.path.join(out_dir, "systems", f"system_{system_id:04d}.csv")


def _load_rows(path, estimators):
    import csv

    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != RESULT_HEADER:
            return None
        rows = [[int(r[0]), r[1], float(r[2]), float(r[3]), float(r[4]), r[5]] for r in reader if r]
    if [r[1] for r in rows] != list(estimators):
        return None
    return rows


def _run_one(config, system_id, out_dir):
    from .io import write_csv

    if out_dir is not None:
        path = _system_file(out_dir, system_id)
        if os.path.exists(path):
            rows = _load_rows(path, config.estimators)
            if rows is not None:
                return rows
    rows = run_system(config, system_id)
    if out_dir is not None:
        write_csv(_system_file(out_dir, system_id), RESULT_HEADER, rows)
    return rows


def summarize(rows, estimators):
    """Quartiles, mean and failure count of AF per estimator."""
    out = []
    for name in estimators:
        vals = np.array([r[2] for r in rows if r[1] == name and r[5] == "ok"], dtype=float)
        fails = sum(1 for r in rows if r[1] == name and r[5] != "ok")
        if vals.size:
            q1, med, q3 = np.percentile(vals, [25, 50, 75])
            mean = float(vals.mean())
        else:
            q1 = med = q3 = mean = float("nan")
        out.append([name, float(q1), float(med), float(q3), mean, fails])
    return out


def run_benchmark(config, out_dir=None):
    """Run the benchmark; returns ``(rows, summary)``.

    With ``out_dir`` each system's rows go to ``systems/system_XXXX.csv``
    (reused on a rerun with the same configuration) and the combined
    ``results.csv`` / ``summary.csv`` are written at the end.
    """
    from joblib import Parallel, delayed

    from .io import write_csv, write_json

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "systems"), exist_ok=True)
        stamp = os.path.join(out_dir, "config.json")
        if os.path.exists(stamp):
            from .io import read_json

            if read_json(stamp) != config.to_dict():
                raise ValueError(f"{out_dir} holds results of a different configuration")
        write_json(stamp, config.to_dict())
    ids = range(config.num_systems)
    if config.n_jobs == 1:
        chunks = [_run_one(config, i, out_dir) for i in ids]
    else:
        chunks = Parallel(n_jobs=config.n_jobs)(delayed(_run_one)(config, i, out_dir) for i in ids)
    rows = [r for chunk in chunks for r in chunk]
    summary = summarize(rows, config.estimators)
    if out_dir is not None:
        write_csv(os.path.join(out_dir, "results.csv"), RESULT_HEADER, rows)
        write_csv(os.path.join(out_dir, "summary.csv"), SUMMARY_HEADER, summary)
    return rows, summary


# ---------------------------------------------------------------------------
# five-pole demonstration system
# ---------------------------------------------------------------------------


def demo_system():
    """Five-pole system with dominant pole 0.936 (three zeros, unit gain)."""
    poles = [0.936, -0.45 + 0.8j, -0.45 - 0.8j, -0.25 + 0.85j, -0.25 - 0.85j]
    zeros = [0.16, -0.8 + 0.4j, -0.8 - 0.4j]
    return SystemSpec(poles, zeros, 1.0)


@dataclass(frozen=True)
class DemoConfig:
    N: int = 500
    n: int = 100
    snr: float = 10.0
    lambda0: float = 0.94
    seed: int = 0
    n_theta: int = 1024
    n_starts: int = 5
    max_evals: int = 500

    def to_dict(self):
        return asdict(self)


def demo_templates(lambda0):
    """ECLS priors with Lorentzian PSDs: at zero, free centre, and their mixture."""
    from .gpsd import ContinuousGpsd, Psd1d
    from .kernels import HyperParams, Kind, KernelModel

    a0 = math.log(lambda0)
    bounds = {"beta": (1e-3, 10.0), "scale": (1e-4, 1e2), "omega0": (0.0, math.pi)}

    def single(params, omega_free):
        om = params.get("omega0", 0.0) if omega_free else 0.0
        return KernelModel(Kind.ECLS_L, HyperParams(beta=params["beta"], omega0=om, lambda0=lambda0,
                                                    scale=params["scale"]))

    def mixture(params):
        psd = Psd1d.mixture([Psd1d.laplacian(params["beta"], 0.0),
                             Psd1d.laplacian(params["beta"], params["omega0"])])
        return KernelModel(Kind.FROM_GPSD, HyperParams(scale=params["scale"]),
                           gpsd=ContinuousGpsd.ecls(a0, psd))

    pick = lambda *names: {k: bounds[k] for k in names}
    return {
        "L0": KernelTemplate(lambda p: single(p, False), pick("beta", "scale")),
        "L": KernelTemplate(lambda p: single(p, True), pick("beta", "omega0", "scale")),
        "M": KernelTemplate(mixture, pick("beta", "omega0", "scale")),
    }


def run_demo(config=None, *, n_true=2000):
    """Identify the demo system with the three priors and compare transforms.

    Returns a dict with the data, the fits, the evaluated transforms on a
    uniform grid over ``[-pi, pi)`` and the integrated absolute errors
    ``int |G_hat - G| d theta``.
    """
    from .analysis import dtft, modulated_dtft
    from .kernels import stationary_psd_discrete

    config = config or DemoConfig()
    system = demo_system()
    data = simulate(system, config.N, config.snr, config.seed)
    theta = -np.pi + 2.0 * np.pi * np.arange(config.n_theta) / config.n_theta
    g_long = true_impulse(system, n_true)
    G_true = dtft(g_long, theta)
    g_true = g_long[: config.n]
    mod_true = modulated_dtft(g_true, config.lambda0, theta)
    budget = OptBudget(n_starts=config.n_starts, max_evals=config.max_evals, seed=config.seed)
    out = {"theta": theta, "G_true": G_true, "modulated_true": mod_true, "g_true": g_true,
           "fits": {}, "g_hat": {}, "G_hat": {}, "error": {}, "psd": {}, "af": {}}
    dth = 2.0 * np.pi / config.n_theta
    for name, tmpl in demo_templates(config.lambda0).items():
        fit = fit_hyperparameters(tmpl, data, config.n, budget)
        est = posterior(fit.model, data, config.n, sigma2=fit.sigma2)
        G_hat = dtft(est.g_hat, theta)
        out["fits"][name] = fit
        out["g_hat"][name] = est.g_hat
        out["G_hat"][name] = G_hat
        out["error"][name] = float(np.sum(np.abs(G_hat - G_true)) * dth)
        out["af"][name] = average_fit(est.g_hat, g_true)
        model = fit.model
        if model.kind.value == "FromGpsd":
            psd = model.gpsd.psd1.scaled(model.hyper.scale)
            out["psd"][name] = psd.periodized(theta, 1.0, None)
        else:
            out["psd"][name] = stationary_psd_discrete(model)(theta)
    return out
