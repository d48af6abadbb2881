"""Command-line entry point.

Every subcommand writes its artifacts into ``--out-dir`` together with a
``run_config.json`` sidecar holding the fully resolved configuration.
Settings resolve as: command-line flag, then ``--config`` JSON file, then
built-in default.  Failures print one line

    gpsdkit-error kind=<ExceptionClass> message=<json string>

on stderr and exit nonzero (2 for invalid settings, 1 otherwise) before any
artifact is written.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys

import numpy as np

from .exceptions import GpsdkitError

__all__ = ["main", "build_parser", "resolve"]


class ConfigError(GpsdkitError, ValueError):
    """Invalid or inconsistent command settings."""


def _parse_grid(text):
    try:
        a, b = str(text).lower().split("x")
        return [int(a), int(b)]
    except ValueError:
        raise ConfigError(f"expected a grid like 3x5, got {text!r}") from None


def _parse_box(text):
    try:
        name, rng = str(text).split("=")
        lo, hi = rng.split(":")
        return name, [float(lo), float(hi)]
    except ValueError:
        raise ConfigError(f"expected name=lower:upper, got {text!r}") from None


def _fold(value):
    if value is None or str(value).lower() in ("none", "exact"):
        return None
    return int(value)


# name -> {key: (default, argparse type, help)}
_COMMON = {"out_dir": (None, str, "directory receiving every artifact")}

COMMANDS = {
    "kernel-eval": {
        "kernel": (None, str, "kernel JSON file"),
        "n": (20, int, "number of time indices"),
        "t_start": (1.0, float, "first time index"),
        "t_step": (1.0, float, "index spacing"),
    },
    "gpsd-grid": {
        "gpsd": (None, str, "continuous GPSD JSON file"),
        "alpha_lo": (-2.0, float, "lowest decay rate"),
        "alpha_hi": (0.0, float, "highest decay rate"),
        "n_alpha": (50, int, "decay-rate grid size"),
        "omega_max": (math.pi, float, "largest frequency"),
        "n_omega": (100, int, "frequency grid size"),
    },
    "discretize": {
        "gpsd": (None, str, "continuous GPSD JSON file"),
        "sampling_time": (1.0, float, "sampling time"),
        "fold_terms": ("3", str, "aliases kept on each side, or 'exact'"),
        "lambda_lo": (0.05, float, "lowest decay radius"),
        "lambda_hi": (0.999, float, "highest decay radius"),
        "n_lambda": (50, int, "decay-radius grid size"),
        "n_theta": (100, int, "angular grid size on [0, pi]"),
    },
    "identify": {
        "data": (None, str, "CSV with columns u, y"),
        "kernel": (None, str, "kernel JSON file"),
        "n": (100, int, "impulse-response length"),
        "free": ([], _parse_box, "tuned hyperparameter box name=lower:upper (repeatable)"),
        "sigma2": (None, float, "known noise variance (estimated when omitted)"),
        "approx": (None, _parse_grid, "grid expansion NALPHAxNOMEGA replacing the kernel"),
        "truth": (None, str, "CSV with column g to score the estimate"),
        "n_starts": (5, int, "optimizer starts"),
        "max_evals": (500, int, "evaluations per start"),
        "seed": (0, int, "seed"),
    },
    "density-map": {
        "kernel": (None, str, "kernel JSON file"),
        "n": (100, int, "impulse-response length"),
        "n_mag": (60, int, "magnitude grid size"),
        "n_phase": (60, int, "phase grid size"),
        "mass": (0.9, float, "mass of the reported phase interval"),
    },
    "dtft": {
        "impulse": (None, str, "CSV with column g holding g(1..n)"),
        "lambda0": (None, float, "modulation radius; plain transform when omitted"),
        "n_theta": (512, int, "frequency grid size on [-pi, pi)"),
    },
    "approx-study": {
        "kernel": (None, str, "kernel JSON file"),
        "grids": (["3x5", "8x32", "16x64"], str, "grid NALPHAxNOMEGA (repeatable)"),
        "n": (50, int, "Gram horizon"),
        "mode": ("grid", str, "grid or random"),
        "num_samples": (100, int, "atoms per random expansion"),
        "seeds": (10, int, "random expansions drawn (seeds 0..seeds-1)"),
    },
    "benchmark": {
        "num_systems": (50, int, "systems"),
        "order": (30, int, "system order"),
        "N": (230, int, "record length"),
        "n": (100, int, "impulse-response length"),
        "snr": (10.0, float, "signal-to-noise ratio"),
        "seed": (0, int, "master seed"),
        "estimators": (None, str, "estimator name (repeatable; default all)"),
        "n_starts": (5, int, "optimizer starts"),
        "max_evals": (500, int, "evaluations per start"),
        "approx": ("3x5", str, "grid of the approximate estimators"),
        "n_jobs": (1, int, "parallel workers"),
        "record_timing": (False, bool, "store wall-clock fit times"),
    },
    "demo-sec6": {
        "N": (500, int, "record length"),
        "n": (100, int, "impulse-response length"),
        "snr": (10.0, float, "signal-to-noise ratio"),
        "lambda0": (0.94, float, "decay radius of the priors"),
        "seed": (0, int, "seed"),
        "n_theta": (1024, int, "frequency grid size on [-pi, pi)"),
        "n_starts": (5, int, "optimizer starts"),
        "max_evals": (500, int, "evaluations per start"),
    },
}

_REPEATABLE = {("identify", "free"), ("approx-study", "grids"), ("benchmark", "estimators")}


def build_parser():
    parser = argparse.ArgumentParser(prog="gpsdkit", description="Kernel-based impulse-response identification.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, opts in COMMANDS.items():
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="JSON file of settings for this command")
        for key, (_, typ, helptext) in {**_COMMON, **opts}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, dest=key, action="store_const", const=True, default=None, help=helptext)
            elif (name, key) in _REPEATABLE:
                p.add_argument(flag, dest=key, action="append", type=str, default=None, help=helptext)
            else:
                p.add_argument(flag, dest=key, type=str, default=None, help=helptext)
    return parser


def _coerce(command, key, value):
    typ = COMMANDS[command].get(key, _COMMON.get(key))[1]
    if value is None:
        return None
    if (command, key) == ("identify", "free"):
        if isinstance(value, dict):
            return {k: [float(v[0]), float(v[1])] for k, v in value.items()}
        return dict(_parse_box(v) for v in value)
    if (command, key) in _REPEATABLE:
        return [str(v) for v in (value if isinstance(value, list) else [value])]
    if key in ("kernel", "gpsd", "data", "truth", "impulse") and isinstance(value, dict):
        return value
    if typ is bool:
        if isinstance(value, bool):
            return value
        raise ConfigError(f"{key} must be true or false")
    if typ is _parse_grid:
        return [int(v) for v in value] if isinstance(value, list) else _parse_grid(value)
    try:
        return typ(value)
    except (TypeError, ValueError):
        raise ConfigError(f"invalid value for {key}: {value!r}") from None


def resolve(command, flags, config_path=None):
    """Merge flags over a config file over defaults; validates keys and types."""
    opts = {**_COMMON, **COMMANDS[command]}
    cfg = {}
    if config_path is not None:
        from .io import read_json

        if not os.path.exists(config_path):
            raise ConfigError(f"config file not found: {config_path}")
        cfg = read_json(config_path)
        if not isinstance(cfg, dict):
            raise ConfigError("config file must hold a JSON object")
        cfg = {k: v for k, v in cfg.items() if k != "command"}
        unknown = sorted(set(cfg) - set(opts))
        if unknown:
            raise ConfigError(f"unknown settings for {command}: {', '.join(unknown)}")
    out = {}
    for key, (default, _, _) in opts.items():
        if flags.get(key) is not None:
            val = flags[key]
        elif key in cfg:
            val = cfg[key]
        else:
            val = default
        out[key] = _coerce(command, key, val)
        if (command, key) == ("identify", "free") and out[key] is None:
            out[key] = {}
    if out["out_dir"] is None:
        raise ConfigError("--out-dir is required")
    return out


def _load_json_arg(value, what):
    """A JSON setting given either inline (in a config file) or as a path."""
    if isinstance(value, dict):
        return value
    if value is None:
        raise ConfigError(f"--{what} is required")
    if not os.path.exists(value):
        raise FileNotFoundError(f"{what} file not found: {value}")
    with open(value) as fh:
        return json.load(fh)


def _kernel(cfg):
    from .kernels import KernelModel

    spec = _load_json_arg(cfg["kernel"], "kernel")
    cfg["kernel"] = spec
    return KernelModel.from_config(spec)


def _gpsd(cfg):
    from .gpsd import ContinuousGpsd

    spec = _load_json_arg(cfg["gpsd"], "gpsd")
    cfg["gpsd"] = spec
    return ContinuousGpsd.from_config(spec)


def _read_columns(cfg, key, needed):
    """Columns of the CSV named by ``cfg[key]``, or the inline columns of a sidecar.

    The columns read are stored back into ``cfg`` so the logged sidecar
    reproduces the run without the original file.
    """
    from .io import read_csv_columns

    value = cfg[key]
    if value is None:
        raise ConfigError(f"an input CSV with columns {', '.join(needed)} is required")
    if isinstance(value, dict):
        cols = {c: np.asarray(v, dtype=float) for c, v in value.items()}
        origin = "inline columns"
    else:
        if not os.path.exists(value):
            raise FileNotFoundError(f"input file not found: {value}")
        cols = read_csv_columns(value)
        origin = value
    missing = [c for c in needed if c not in cols]
    if missing:
        raise ConfigError(f"{origin} lack columns {', '.join(missing)}")
    cfg[key] = {c: [float(x) for x in cols[c]] for c in needed}
    return cols


def _positive(cfg, *keys):
    for k in keys:
        if not cfg[k] > 0:
            raise ConfigError(f"{k} must be positive")


# ---------------------------------------------------------------------------
# commands: each returns {file name: ("csv", header, rows) | ("json", obj)}
# ---------------------------------------------------------------------------


def _cmd_kernel_eval(cfg):
    _positive(cfg, "n", "t_step")
    k = _kernel(cfg)
    t = cfg["t_start"] + cfg["t_step"] * np.arange(cfg["n"])
    K = k.gram(t)
    T, S = np.meshgrid(t, t, indexing="ij")
    return {"kernel.csv": ("csv", ["t", "s", "value"], np.column_stack([T.ravel(), S.ravel(), K.ravel()]))}


def _cmd_gpsd_grid(cfg):
    from .gpsd import eval_continuous

    _positive(cfg, "n_alpha", "n_omega", "omega_max")
    g = _gpsd(cfg)
    om = np.linspace(0.0, cfg["omega_max"], cfg["n_omega"])
    if g.dirac_alpha is not None:
        al = np.array([g.dirac_alpha])
        vals = g.psd1(om)[None, :]
    else:
        al = np.linspace(cfg["alpha_lo"], cfg["alpha_hi"], cfg["n_alpha"])
        A, W = np.meshgrid(al, om, indexing="ij")
        vals = eval_continuous(g, A, W)
    A, W = np.meshgrid(al, om, indexing="ij")
    return {"gpsd_grid.csv": ("csv", ["alpha", "omega", "value"], np.column_stack([A.ravel(), W.ravel(), vals.ravel()]))}


def _cmd_discretize(cfg):
    from .analysis import gpsd_figure_grid
    from .gpsd import discretize

    _positive(cfg, "n_lambda", "n_theta")
    cfg["fold_terms"] = _fold(cfg["fold_terms"])
    dg = discretize(_gpsd(cfg), cfg["sampling_time"], cfg["fold_terms"])
    lam = np.linspace(cfg["lambda_lo"], cfg["lambda_hi"], cfg["n_lambda"])
    th = np.linspace(0.0, np.pi, cfg["n_theta"])
    vals = gpsd_figure_grid(dg, lam, th)
    L, TH = np.meshgrid(lam, th, indexing="ij")
    return {"discrete_gpsd.csv": ("csv", ["lambda", "theta", "value"], np.column_stack([L.ravel(), TH.ravel(), vals.ravel()]))}


def _cmd_identify(cfg):
    from .harness import average_fit
    from .regression import DataRecord, KernelTemplate, OptBudget, fit_hyperparameters, posterior

    _positive(cfg, "n", "n_starts", "max_evals")
    cols = _read_columns(cfg, "data", ["u", "y"])
    k = _kernel(cfg)
    data = DataRecord(cols["u"], cols["y"], cfg["sigma2"])
    tmpl = KernelTemplate.from_kernel(k, cfg["free"], approx=cfg["approx"], fit_sigma2=cfg["sigma2"] is None)
    if not tmpl.free and not tmpl.fit_sigma2:
        model, params, s2 = tmpl.build({}), {}, cfg["sigma2"]
    else:
        budget = OptBudget(n_starts=cfg["n_starts"], max_evals=cfg["max_evals"], seed=cfg["seed"])
        fit = fit_hyperparameters(tmpl, data, cfg["n"], budget)
        model, params, s2 = fit.model, fit.params, fit.sigma2
    est = posterior(model, data, cfg["n"], sigma2=s2)
    report = {"params": params, "sigma2": s2, "nll": est.nll, "method": est.method}
    if hasattr(model, "to_config"):
        report["kernel"] = model.to_config()
    if cfg["truth"] is not None:
        g = _read_columns(cfg, "truth", ["g"])["g"]
        report["AF"] = average_fit(est.g_hat, g[: cfg["n"]])
        print(f"AF {report['AF']:.6f}")
    t = np.arange(1, cfg["n"] + 1)
    return {"estimate.csv": ("csv", ["t", "g_hat", "posterior_sd"], np.column_stack([t, est.g_hat, est.posterior_sd])),
            "hyperparameters.json": ("json", report)}


def _cmd_density_map(cfg):
    from .analysis import default_pole_axes, pole_density_map

    _positive(cfg, "n", "n_mag", "n_phase")
    k = _kernel(cfg)
    mags, phases = default_pole_axes(cfg["n_mag"], cfg["n_phase"])
    grid = pole_density_map(k, mags, phases, n=cfg["n"])
    rows = np.column_stack([grid.rows("density"), grid.rows("log")[:, 2]])
    r, th = grid.argmax()
    summary = {"argmax_magnitude": r, "argmax_phase": th, "phase_spread": grid.phase_spread(cfg["mass"]),
               "phase_interval": list(grid.phase_interval(cfg["mass"]))}
    return {"density_map.csv": ("csv", ["magnitude", "phase", "density", "log_density"], rows),
            "density_summary.json": ("json", summary)}


def _theta_grid(n):
    return -np.pi + 2.0 * np.pi * np.arange(n) / n


def _cmd_dtft(cfg):
    from .analysis import dtft, modulated_dtft

    _positive(cfg, "n_theta")
    g = _read_columns(cfg, "impulse", ["g"])["g"]
    th = _theta_grid(cfg["n_theta"])
    G = dtft(g, th) if cfg["lambda0"] is None else modulated_dtft(g, cfg["lambda0"], th)
    return {"dtft.csv": ("csv", ["theta", "re", "im", "abs"], np.column_stack([th, G.real, G.imag, np.abs(G)]))}


def _cmd_approx_study(cfg):
    from .features import approx_error, grid_expansion, random_expansion
    from .gpsd import discretize
    from .kernels import kernel_to_gpsd

    _positive(cfg, "n", "num_samples", "seeds")
    if cfg["mode"] not in ("grid", "random"):
        raise ConfigError("mode must be grid or random")
    grids = [_parse_grid(g) if isinstance(g, str) else list(g) for g in cfg["grids"]]
    cfg["grids"] = [f"{a}x{b}" for a, b in grids]
    k = _kernel(cfg)
    g = kernel_to_gpsd(k)
    if k.discrete:
        g = discretize(g, 1.0, None)
    idx = np.arange(1, cfg["n"] + 1)
    rows = []
    if cfg["mode"] == "grid":
        for a, b in grids:
            e = grid_expansion(g, a, b)
            rows.append([a, b, e.n_atoms, approx_error(e, k, idx), e.total_weight()])
        return {"approx_study.csv": ("csv", ["n_alpha", "n_omega", "n_atoms", "max_abs_error", "total_weight"], rows)}
    for seed in range(cfg["seeds"]):
        e = random_expansion(g, cfg["num_samples"], seed)
        rows.append([seed, e.n_atoms, approx_error(e, k, idx), e.total_weight()])
    return {"approx_study.csv": ("csv", ["seed", "n_atoms", "max_abs_error", "total_weight"], rows)}


def _cmd_benchmark(cfg):
    from .harness import ESTIMATORS, ExperimentConfig

    ests = cfg["estimators"] or list(ESTIMATORS)
    cfg["estimators"] = ests
    exp = ExperimentConfig(num_systems=cfg["num_systems"], order=cfg["order"], N=cfg["N"], n=cfg["n"],
                           snr=cfg["snr"], seed=cfg["seed"], estimators=tuple(ests), n_starts=cfg["n_starts"],
                           max_evals=cfg["max_evals"], approx=tuple(_parse_grid(cfg["approx"])),
                           n_jobs=cfg["n_jobs"], record_timing=cfg["record_timing"])
    return {"__benchmark__": exp}


def _cmd_demo(cfg):
    from .harness import DemoConfig, run_demo

    demo = DemoConfig(N=cfg["N"], n=cfg["n"], snr=cfg["snr"], lambda0=cfg["lambda0"], seed=cfg["seed"],
                      n_theta=cfg["n_theta"], n_starts=cfg["n_starts"], max_evals=cfg["max_evals"])
    res = run_demo(demo)
    names = list(res["G_hat"])
    th = res["theta"]
    tr_cols = [th, res["G_true"].real, res["G_true"].imag]
    tr_head = ["theta", "G_true_re", "G_true_im"]
    for nm in names:
        tr_cols += [res["G_hat"][nm].real, res["G_hat"][nm].imag]
        tr_head += [f"G_{nm}_re", f"G_{nm}_im"]
    t = np.arange(1, demo.n + 1)
    mod = res["modulated_true"]
    summary = {nm: {"transform_error": res["error"][nm], "AF": res["af"][nm], "params": res["fits"][nm].params,
                    "sigma2": res["fits"][nm].sigma2, "nll": res["fits"][nm].nll} for nm in names}
    return {
        "transforms.csv": ("csv", tr_head, np.column_stack(tr_cols)),
        "modulated.csv": ("csv", ["theta", "re", "im", "abs"], np.column_stack([th, mod.real, mod.imag, np.abs(mod)])),
        "psd.csv": ("csv", ["theta"] + [f"psd_{nm}" for nm in names], np.column_stack([th] + [res["psd"][nm] for nm in names])),
        "impulse.csv": ("csv", ["t", "g_true"] + [f"g_{nm}" for nm in names],
                        np.column_stack([t, res["g_true"]] + [res["g_hat"][nm] for nm in names])),
        "demo_summary.json": ("json", summary),
    }


_RUNNERS = {
    "kernel-eval": _cmd_kernel_eval,
    "gpsd-grid": _cmd_gpsd_grid,
    "discretize": _cmd_discretize,
    "identify": _cmd_identify,
    "density-map": _cmd_density_map,
    "dtft": _cmd_dtft,
    "approx-study": _cmd_approx_study,
    "benchmark": _cmd_benchmark,
    "demo-sec6": _cmd_demo,
}


def _write(out_dir, artifacts, cfg, command):
    from .io import write_csv, write_json

    os.makedirs(out_dir, exist_ok=True)
    for fname, art in artifacts.items():
        path = os.path.join(out_dir, fname)
        if art[0] == "csv":
            write_csv(path, art[1], art[2])
        else:
            write_json(path, art[1])
    write_json(os.path.join(out_dir, "run_config.json"), {"command": command, **cfg})


def _error(exc, code):
    print(f"gpsdkit-error kind={type(exc).__name__} message={json.dumps(str(exc))}", file=sys.stderr)
    return code


def main(argv=None):
    """Run one subcommand; returns the process exit code."""
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    flags = {k: v for k, v in vars(args).items() if k not in ("command", "config")}
    try:
        cfg = resolve(args.command, flags, args.config)
    except (ConfigError, ValueError) as exc:
        return _error(exc, 2)
    try:
        artifacts = _RUNNERS[args.command](cfg)
        if "__benchmark__" in artifacts:
            from .harness import run_benchmark

            _, summary = run_benchmark(artifacts["__benchmark__"], cfg["out_dir"])
            _write(cfg["out_dir"], {}, cfg, args.command)
            for row in summary:
                print("{} median={:.3f} failures={}".format(row[0], row[2], row[5]))
        else:
            _write(cfg["out_dir"], artifacts, cfg, args.command)
    except ConfigError as exc:
        return _error(exc, 2)
    except (GpsdkitError, ValueError, TypeError, KeyError, OSError, ArithmeticError, np.linalg.LinAlgError) as exc:
        return _error(exc, 1)
    return 0


if __name__ == "__main__":
    sys.exit(main())
