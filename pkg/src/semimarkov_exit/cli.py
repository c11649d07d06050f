"""Manifest-driven experiment runner.

A manifest is an INI file with two sections::

    [experiment]
    name = table1-drifted-wiener
    seed = 20261016
    output_dir = out/table1

    [parameters]
    n_paths = 10000

Unknown sections or keys are rejected.  ``validate`` echoes the fully
defaulted manifest; ``run`` writes CSVs, a plotting script and
``metadata.json`` into the output directory.

Exit status: 0 success, 1 usage or manifest error (nothing written),
2 runtime failure (``error.json`` written).
"""

from __future__ import annotations

import argparse
import configparser
import csv
import json
import math
import os
import sys
import time
import traceback
from dataclasses import dataclass
from typing import Callable

import numpy as np

from . import __version__
from .asymptotics import (bm_no_drift_predictor, diagnostic_ratios,
                          finite_mean_predictor, mittag_leffler_predictor, predict_tail,
                          rapid_decay_diagnostic, write_diagnostics_csv)
from .exit_mc import (ExitExperimentConfig, ExponentialExit, LinearSDE, estimate_survival, exit_indices,
                      survival_from_indices)
from .gauss_markov import constant_threshold
from .lif import LifParams, lif_config, lif_isi_tail_constant, lif_trajectory
from .rng_stable import RandomStream
from .special_fn import mittag_leffler
from .subordination import drift_bernstein, stable_bernstein

DEFAULT_SEED = 20261016


class ManifestError(ValueError):
    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("; ".join(self.problems))


# parameter tables -----------------------------------------------------------

def _pos(v):
    return v > 0


def _unit(v):
    return 0 < v < 1


def _floats(text: str) -> tuple:
    return tuple(float(x) for x in text.replace(" ", "").split(",") if x)


@dataclass(frozen=True)
class Param:
    kind: type | Callable
    default: object
    check: Callable | None = None
    hint: str = ""


_STEPS = {
    "dt": Param(float, 0.01, _pos, "positive"),
    "dy": Param(float, 0.01, _pos, "positive"),
    "n_paths": Param(int, 10_000, _pos, "positive integer"),
}
_LIF = {
    "i0": Param(float, 6.0),
    "sigma": Param(float, 1.0, _pos, "positive"),
    "theta": Param(float, 10.0, _pos, "positive"),
    "v_hat": Param(float, 0.0),
    "v0": Param(float, 0.0),
    "v_reset": Param(float, 0.0),
    "v_th": Param(float, 20.0),
}

EXPERIMENTS: dict[str, dict[str, Param]] = {
    "table1-drifted-wiener": {
        "alpha": Param(float, 0.7, _unit, "in (0, 1)"),
        "delta": Param(float, 1.0, _pos, "positive"),
        "c": Param(float, 1.0, _pos, "positive"),
        **_STEPS,
        "horizon": Param(float, 100.0, _pos, "positive"),
        "times": Param(_floats, (25.0, 50.0, 75.0), lambda v: len(v) > 0 and min(v) > 0, "positive list"),
    },
    "table1-driftless-wiener": {
        "alpha": Param(float, 0.7, _unit, "in (0, 1)"),
        "c": Param(float, 1.0, _pos, "positive"),
        **_STEPS,
        "horizon": Param(float, 100.0, _pos, "positive"),
        "times": Param(_floats, (25.0, 50.0, 75.0, 100.0), lambda v: len(v) > 0 and min(v) > 0, "positive list"),
    },
    "lif-trajectory": {
        **_LIF,
        "alpha": Param(float, 0.75, _unit, "in (0, 1)"),
        "dt": Param(float, 0.01, _pos, "positive"),
        "dy": Param(float, 0.01, _pos, "positive"),
        "horizon": Param(float, 100.0, _pos, "positive"),
    },
    "lif-isi-tails": {
        **_LIF,
        "alphas": Param(_floats, (0.6, 0.75, 0.9), lambda v: len(v) > 0 and all(0 < a < 1 for a in v),
                        "list in (0, 1)"),
        **_STEPS,
        "horizon": Param(float, 100.0, _pos, "positive"),
        "times": Param(_floats, (20.0, 40.0, 60.0), lambda v: len(v) > 0 and min(v) > 0, "positive list"),
    },
    "ml-survival-check": {
        "alpha": Param(float, 0.5, _unit, "in (0, 1)"),
        "h": Param(float, 1.0, _pos, "positive"),
        "dt": Param(float, 0.01, _pos, "positive"),
        "dy": Param(float, 0.01, _pos, "positive"),
        "n_paths": Param(int, 20_000, _pos, "positive integer"),
        "horizon": Param(float, 20.0, _pos, "positive"),
        "times": Param(_floats, (1.0, 5.0, 10.0, 20.0), lambda v: len(v) > 0 and min(v) > 0, "positive list"),
    },
    "custom": {
        "process": Param(str, "drifted-wiener",
                         lambda v: v in ("wiener", "drifted-wiener", "ou", "exponential"),
                         "one of wiener, drifted-wiener, ou, exponential"),
        "alpha": Param(float, 0.7, lambda v: 0 < v <= 1, "in (0, 1]; 1 means no time change"),
        "c": Param(float, 1.0, _pos, "positive"),
        "drift": Param(float, 1.0),
        "theta": Param(float, 1.0, _pos, "positive"),
        "sigma": Param(float, 1.0, _pos, "positive"),
        "h": Param(float, 1.0, _pos, "positive"),
        **_STEPS,
        "horizon": Param(float, 100.0, _pos, "positive"),
        "times": Param(_floats, (), lambda v: all(t > 0 for t in v), "positive list"),
    },
}

_EXPERIMENT_KEYS = ("name", "seed", "output_dir")


@dataclass(frozen=True)
class Manifest:
    name: str
    seed: int
    output_dir: str
    parameters: dict

    def to_ini(self) -> str:
        lines = ["[experiment]", f"name = {self.name}", f"seed = {self.seed}",
                 f"output_dir = {self.output_dir}", "", "[parameters]"]
        for key, value in self.parameters.items():
            lines.append(f"{key} = {_format_value(value)}")
        return "\n".join(lines) + "\n"


def _format_value(value) -> str:
    if isinstance(value, tuple):
        return ", ".join(repr(v) for v in value)
    return repr(value) if isinstance(value, float) else str(value)


def parse_manifest(text: str, seed: int | None = None, out: str | None = None) -> Manifest:
    """Strictly parse manifest text, listing every problem found."""
    cp = configparser.ConfigParser(interpolation=None, default_section="__none__")
    try:
        cp.read_string(text)
    except configparser.Error as exc:
        raise ManifestError([f"malformed manifest: {exc}"]) from None
    problems = []
    for sec in cp.sections():
        if sec not in ("experiment", "parameters"):
            problems.append(f"unknown section [{sec}]")
    if not cp.has_section("experiment"):
        raise ManifestError(problems + ["missing section [experiment]"])
    exp = cp["experiment"]
    for key in exp:
        if key not in _EXPERIMENT_KEYS:
            problems.append(f"unknown key '{key}' in [experiment]")
    name = exp.get("name", "").strip()
    if not name:
        problems.append("missing experiment name")
    elif name not in EXPERIMENTS:
        problems.append(f"unknown experiment '{name}' (choose from {', '.join(EXPERIMENTS)})")

    run_seed = DEFAULT_SEED
    if "seed" in exp:
        try:
            run_seed = int(exp["seed"])
            if not 0 <= run_seed < 2 ** 64:
                raise ValueError
        except ValueError:
            problems.append(f"seed must be an unsigned 64-bit integer, got '{exp['seed']}'")
    if seed is not None:
        run_seed = seed
    output_dir = out if out is not None else exp.get("output_dir", "").strip() or f"out/{name or 'run'}"

    params = {}
    table = EXPERIMENTS.get(name)
    raw = cp["parameters"] if cp.has_section("parameters") else {}
    if table is not None:
        for key in raw:
            if key not in table:
                problems.append(f"unknown parameter '{key}' for experiment '{name}'")
        for key, spec in table.items():
            if key not in raw:
                params[key] = spec.default
                continue
            try:
                value = spec.kind(raw[key].strip())
            except ValueError:
                problems.append(f"parameter '{key}' has invalid value '{raw[key]}'")
                continue
            if spec.check is not None and not spec.check(value):
                problems.append(f"parameter '{key}' must be {spec.hint}, got '{raw[key]}'")
                continue
            params[key] = value
    if problems:
        raise ManifestError(problems)
    if name.startswith("lif") and not params["v_reset"] < params["v_th"]:
        raise ManifestError(["parameter 'v_reset' must lie below 'v_th'"])
    return Manifest(name, run_seed, output_dir, params)


def load_manifest(path: str, seed: int | None = None, out: str | None = None) -> Manifest:
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ManifestError([f"cannot read manifest: {exc}"]) from None
    return parse_manifest(text, seed, out)


# experiments ----------------------------------------------------------------

@dataclass
class RunResult:
    files: list
    summary: dict
    censored: dict


def _write_rows(path, header, rows, seed):
    with open(path, "w", newline="") as fh:
        fh.write(f"# seed={seed}\n")
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.10g}" if isinstance(v, float) else v for v in row])


def _write_prediction(path, grid, values, seed):
    _write_rows(path, ["t", "prediction"], zip(grid.tolist(), np.asarray(values, dtype=float).tolist()), seed)


def _rows_summary(rows):
    return [dict(t=r.t, RL=None if math.isnan(r.RL) else r.RL, R=r.R, n_alive=r.n_alive,
                 reliable=r.reliable) for r in rows]


def _safe_rows(est, predictor, times):
    """Diagnostics at the requested times that lie on the grid with nonzero survival."""
    ok = []
    for t in times:
        try:
            i = est.index_of(t)
        except ValueError:
            continue
        if est.survival[i] > 0:
            ok.append(t)
    return diagnostic_ratios(est, predictor, ok)


def _wiener_table(m: Manifest, outdir: str, drift: float, workers: int) -> RunResult:
    p = m.parameters
    f = stable_bernstein(p["alpha"])
    cfg = ExitExperimentConfig(LinearSDE(math.inf, drift, 1.0, 0.0), f, constant_threshold(p["c"]),
                               dt=p["dt"], dy=p["dy"], horizon=p["horizon"],
                               n_paths=p["n_paths"], seed=m.seed)
    est = estimate_survival(cfg, workers=workers)
    if drift > 0:
        predictor = finite_mean_predictor(p["c"] / drift, f)
    else:
        predictor = bm_no_drift_predictor(p["c"], f)
    rows = _safe_rows(est, predictor, p["times"])
    files = [os.path.join(outdir, n) for n in ("survival.csv", "diagnostics.csv", "prediction.csv")]
    est.to_csv(files[0], m.seed)
    write_diagnostics_csv(files[1], rows, m.seed)
    grid = est.grid[1:]
    _write_prediction(files[2], grid, predict_tail(predictor, grid), m.seed)
    return RunResult(files, {"diagnostics": _rows_summary(rows)}, {"survival": est.n_censored})


def _lif_params(p: dict) -> LifParams:
    return LifParams(theta=p["theta"], v_hat=p["v_hat"], sigma=p["sigma"], stimulus=p["i0"],
                     v0=p["v0"], v_reset=p["v_reset"], v_th=p["v_th"])


def _lif_trajectory(m: Manifest, outdir: str, workers: int) -> RunResult:
    p = m.parameters
    tr = lif_trajectory(_lif_params(p), p["alpha"], p["dt"], p["dy"], p["horizon"], RandomStream(m.seed, 0))
    keep = tr.y <= p["horizon"] + 1e-12
    files = [os.path.join(outdir, "trajectory_markov.csv"), os.path.join(outdir, "trajectory_time_changed.csv")]
    _write_rows(files[0], ["t", "v"], zip(tr.y[keep].tolist(), tr.v[keep].tolist()), m.seed)
    _write_rows(files[1], ["t", "clock", "v"], zip(tr.t.tolist(), tr.clock.tolist(), tr.v_alpha.tolist()), m.seed)
    spikes = tr.spikes[tr.spikes * p["dy"] <= p["horizon"]]
    return RunResult(files, {"markov_spikes": int(len(spikes))}, {})


def _lif_isi(m: Manifest, outdir: str, workers: int) -> RunResult:
    p = m.parameters
    lp = _lif_params(p)
    files, summary, censored = [], {}, {}
    markov = lif_config(lp, None, dt=p["dt"], dy=p["dt"], horizon=p["horizon"],
                        n_paths=p["n_paths"], seed=m.seed)
    idx_m = exit_indices(markov, workers=workers)
    est_m = survival_from_indices(idx_m, markov.n_grid, markov.dt, m.seed)
    path = os.path.join(outdir, "survival_markov.csv")
    est_m.to_csv(path, m.seed)
    files.append(path)
    censored["markov"] = est_m.n_censored
    if est_m.n_censored:
        raise RuntimeError("Markov ISI censored at the horizon; the mean ISI is not estimable")
    isi = idx_m * markov.dt
    summary["rapid_decay"] = {}
    for k, alpha in enumerate(p["alphas"]):
        cfg = lif_config(lp, alpha, dt=p["dt"], dy=p["dy"], horizon=p["horizon"],
                         n_paths=p["n_paths"], seed=(m.seed + k + 1) % 2 ** 64)
        est = estimate_survival(cfg, workers=workers)
        fit = lif_isi_tail_constant(lp, alpha, isi_sample=isi)
        summary["markov_mean_isi"] = fit.C
        summary["markov_mean_isi_stderr"] = fit.C_stderr
        label = f"alpha{alpha:g}"
        rows = _safe_rows(est, fit.predictor, p["times"])
        s_path = os.path.join(outdir, f"survival_{label}.csv")
        d_path = os.path.join(outdir, f"diagnostics_{label}.csv")
        pr_path = os.path.join(outdir, f"prediction_{label}.csv")
        est.to_csv(s_path, m.seed)
        write_diagnostics_csv(d_path, rows, m.seed)
        _write_prediction(pr_path, est.grid[1:], predict_tail(fit.predictor, est.grid[1:]), m.seed)
        files += [s_path, d_path, pr_path]
        censored[label] = est.n_censored
        summary[label] = _rows_summary(rows)
        small = [t for t in (0.4, 0.2, 0.1) if t >= p["dt"]]
        if len(small) >= 2:
            rep = rapid_decay_diagnostic(est, (1, 2, 4), small)
            summary["rapid_decay"][label] = {
                "times": list(rep.times), "ratios": {str(n): list(v) for n, v in rep.ratios.items()},
                "strictly_decreasing": {str(n): v for n, v in rep.strictly_decreasing.items()},
                "consistent_with_rapid_decay": rep.consistent_with_rapid_decay}
    return RunResult(files, summary, censored)


def _ml_check(m: Manifest, outdir: str, workers: int) -> RunResult:
    p = m.parameters
    cfg = ExitExperimentConfig(ExponentialExit(p["h"]), stable_bernstein(p["alpha"]), constant_threshold(1.0),
                               dt=p["dt"], dy=p["dy"], horizon=p["horizon"], n_paths=p["n_paths"], seed=m.seed)
    est = estimate_survival(cfg, workers=workers)
    predictor = mittag_leffler_predictor(p["h"], p["alpha"])
    exact = mittag_leffler(p["alpha"], -p["h"] * est.grid ** p["alpha"])
    sup = float(np.max(np.abs(est.survival - exact)))
    rows = _safe_rows(est, predictor, p["times"])
    files = [os.path.join(outdir, n) for n in ("survival.csv", "diagnostics.csv", "prediction.csv")]
    est.to_csv(files[0], m.seed)
    write_diagnostics_csv(files[1], rows, m.seed)
    _write_prediction(files[2], est.grid, exact, m.seed)
    return RunResult(files, {"sup_distance": sup, "diagnostics": _rows_summary(rows)}, {"survival": est.n_censored})


def _custom(m: Manifest, outdir: str, workers: int) -> RunResult:
    p = m.parameters
    f = drift_bernstein() if p["alpha"] >= 1.0 else stable_bernstein(p["alpha"])
    proc = p["process"]
    threshold = constant_threshold(p["c"])
    predictor = None
    if proc == "exponential":
        model = ExponentialExit(p["h"])
        threshold = constant_threshold(1.0)
        if f.kind == "stable":
            predictor = mittag_leffler_predictor(p["h"], p["alpha"])
    elif proc == "ou":
        model = LinearSDE(p["theta"], 0.0, p["sigma"], 0.0)
    else:
        drift = p["drift"] if proc == "drifted-wiener" else 0.0
        model = LinearSDE(math.inf, drift, p["sigma"], 0.0)
        if f.kind == "stable" and p["sigma"] == 1.0:
            predictor = (finite_mean_predictor(p["c"] / drift, f) if drift > 0
                         else bm_no_drift_predictor(p["c"], f) if drift == 0 else None)
    cfg = ExitExperimentConfig(model, f, threshold, dt=p["dt"], dy=p["dy"], horizon=p["horizon"],
                               n_paths=p["n_paths"], seed=m.seed)
    est = estimate_survival(cfg, workers=workers)
    files = [os.path.join(outdir, "survival.csv")]
    est.to_csv(files[0], m.seed)
    summary = {}
    if predictor is not None:
        rows = _safe_rows(est, predictor, p["times"])
        files.append(os.path.join(outdir, "diagnostics.csv"))
        write_diagnostics_csv(files[-1], rows, m.seed)
        summary["diagnostics"] = _rows_summary(rows)
    return RunResult(files, summary, {"survival": est.n_censored})


RUNNERS = {
    "table1-drifted-wiener": lambda m, o, w: _wiener_table(m, o, m.parameters["delta"], w),
    "table1-driftless-wiener": lambda m, o, w: _wiener_table(m, o, 0.0, w),
    "lif-trajectory": _lif_trajectory,
    "lif-isi-tails": _lif_isi,
    "ml-survival-check": _ml_check,
    "custom": _custom,
}


# plot scripts ---------------------------------------------------------------

_PLOT_HEAD = '''"""Render the figure for this run from its CSV files (needs matplotlib)."""
import os

import numpy as np
import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt

HERE = os.path.dirname(os.path.abspath(__file__))


def load(name):
    # line 1 is the "# seed=" comment, line 2 the column names
    return np.genfromtxt(os.path.join(HERE, name), delimiter=",", skip_header=1, names=True)


'''

_PLOT_BODY = {
    "wiener": '''s = load("survival.csv")
p = load("prediction.csv")
fig, ax = plt.subplots(figsize=(6, 4))
alive = s["survival"] > 0
ax.loglog(s["t"][alive], s["survival"][alive], "k-", label="simulated")
ax.loglog(p["t"], p["prediction"], "r-", label="asymptotic")
ax.set_xlabel("t")
ax.set_ylabel("P(exit > t)")
ax.legend()
''',
    "lif-trajectory": '''a = load("trajectory_markov.csv")
b = load("trajectory_time_changed.csv")
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4), sharey=True)
ax1.plot(a["t"], a["v"], "k-", lw=0.6)
ax1.set_title("V(t)")
ax2.plot(b["t"], b["v"], "k-", lw=0.6)
ax2.set_title("V(L(t))")
for ax in (ax1, ax2):
    ax.set_xlabel("t")
''',
    "lif-isi-tails": '''import glob
fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(10, 4))
for path in sorted(glob.glob(os.path.join(HERE, "survival_alpha*.csv"))):
    name = os.path.basename(path)
    s = load(name)
    label = name[len("survival_"):-4]
    ax1.plot(s["t"], s["survival"], label=label)
    ax2.plot(s["t"], s["survival"], label=label)
m = load("survival_markov.csv")
ax2.plot(m["t"], m["survival"], "k--", label="Markov")
ax2.set_xlim(0, 4)
for ax in (ax1, ax2):
    ax.set_xlabel("t")
    ax.set_ylabel("P(ISI > t)")
    ax.legend()
''',
    "ml-survival-check": '''s = load("survival.csv")
p = load("prediction.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(s["t"], s["survival"], "k-", label="simulated")
ax.plot(p["t"], p["prediction"], "r--", label="Mittag-Leffler")
ax.set_xlabel("t")
ax.set_ylabel("P(exit > t)")
ax.legend()
''',
    "custom": '''s = load("survival.csv")
fig, ax = plt.subplots(figsize=(6, 4))
ax.plot(s["t"], s["survival"], "k-")
ax.set_xlabel("t")
ax.set_ylabel("P(exit > t)")
''',
}

_PLOT_TAIL = '''fig.tight_layout()
fig.savefig(os.path.join(HERE, "figure.png"), dpi=150)
'''


def plot_script(name: str) -> str:
    key = "wiener" if name.startswith("table1") else name
    return _PLOT_HEAD + _PLOT_BODY[key] + _PLOT_TAIL


# entry points ---------------------------------------------------------------

def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.floating,)):
        return float(obj)
    return obj


def run(manifest: Manifest, workers: int = 1) -> RunResult:
    outdir = manifest.output_dir
    os.makedirs(outdir, exist_ok=True)
    start = time.perf_counter()
    result = RUNNERS[manifest.name](manifest, outdir, workers)
    wall = time.perf_counter() - start
    plot_path = os.path.join(outdir, "plot.py")
    with open(plot_path, "w") as fh:
        fh.write(plot_script(manifest.name))
    meta = {
        "experiment": manifest.name,
        "seed": manifest.seed,
        "parameters": _jsonable(manifest.parameters),
        "censored": result.censored,
        "summary": _jsonable(result.summary),
        "files": [os.path.basename(f) for f in result.files] + ["plot.py"],
        "wall_time_seconds": wall,
        "version": __version__,
    }
    with open(os.path.join(outdir, "metadata.json"), "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
    result.files.append(plot_path)
    return result


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="semimarkov-exit",
                                     description="Exit-time experiments for time-changed Gauss-Markov processes.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, text in (("run", "run an experiment manifest"), ("validate", "echo the defaulted manifest")):
        p = sub.add_parser(name, help=text)
        p.add_argument("manifest")
        p.add_argument("--seed", type=int, default=None, help="override the manifest seed")
        p.add_argument("--out", default=None, help="override the output directory")
        if name == "run":
            p.add_argument("--workers", type=int, default=1, help="worker processes for trajectories")
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    try:
        manifest = load_manifest(args.manifest, args.seed, args.out)
    except ManifestError as exc:
        for problem in exc.problems:
            print(f"error: {problem}", file=sys.stderr)
        return 1
    if args.command == "validate":
        sys.stdout.write(manifest.to_ini())
        return 0
    if args.workers < 1:
        print("error: --workers must be at least 1", file=sys.stderr)
        return 1
    try:
        run(manifest, workers=args.workers)
    except Exception as exc:  # any module failure becomes a machine-readable record
        record = {"experiment": manifest.name, "seed": manifest.seed, "error": type(exc).__name__,
                  "message": str(exc), "traceback": traceback.format_exc()}
        try:
            os.makedirs(manifest.output_dir, exist_ok=True)
            with open(os.path.join(manifest.output_dir, "error.json"), "w") as fh:
                json.dump(record, fh, indent=2)
        except OSError:
            pass
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    return 0


if __name__ == "__main__":
    sys.exit(main())
