"""Monte-Carlo harness: metrics, configs, trial runner and result files.

A config sweeps one parameter (optionally a second one for phase-transition
grids) over fixed values of the rest.  Trial ``i`` at every sweep point uses
seed ``seed + i``.  Results go to::

    trials.csv        one row per (point, method, trial), fixed columns
    trials.json       the same records with spike lists and extra diagnostics
    aggregate.json    per (method, point) summaries
    curve.csv         aggregate table for NMSE / MSE plots
    success_grid_<method>.csv   heatmap when a second sweep is set
    comparison.csv    pswf vs baseline side by side when both ran
    metadata.json     timestamps and wall-clock totals (not reproducible)
"""

from __future__ import annotations

import csv
import dataclasses
import io
import json
import math
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np

from . import atomic_sdp
from .baseline import build_uniform_scheme, solve_grid_blind_sr
from .conic import DEFAULT_TOL
from .localization import DegenerateSpectrumError, estimate_rank, match_spikes, vandermonde_recover
from .pswf import build_basis
from .signal_model import generate_instance

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "SUCCESS_TOL",
    "CSV_COLUMNS",
    "TIMING_COLUMNS",
    "nmse",
    "spike_mse",
    "success_flag",
    "trend_ok",
    "ExperimentConfig",
    "load_config",
    "preset",
    "PRESETS",
    "Recovery",
    "recover",
    "run_trial",
    "draw_instance",
    "ExperimentResult",
    "run_monte_carlo",
    "write_results",
    "trials_csv",
    "aggregate",
    "config_from_dict",
]

SUCCESS_TOL = 3e-4
CSV_COLUMNS = ("trial", "seed", "method", "K", "L", "M", "snr_db", "status", "nmse", "max_tau_err", "success", "solve_ms")
TIMING_COLUMNS = ("solve_ms",)
METHODS = ("pswf", "baseline")
SWEEPABLE = {"K": "k", "L": "l", "M": "m", "SNR": "snr_db"}


# -- metrics ----------------------------------------------------------------


def nmse(z_hat, z_true):
    z_true = np.asarray(z_true)
    den = np.linalg.norm(z_true) ** 2
    if den == 0:
        raise ValueError("NMSE undefined for a zero reference")
    z_hat = np.asarray(z_hat)
    if z_hat.shape != z_true.shape:
        raise ValueError("shape mismatch")
    return float(np.linalg.norm(z_hat - z_true) ** 2 / den)


def _sq_error(taus_hat, taus_true):
    m = match_spikes(taus_hat, taus_true)
    if not m.pairing:
        return math.nan, m
    return float(np.sum(m.errors**2)), m


def spike_mse(trials):
    """Mean over trials of the squared l2 error between matched spike vectors.

    ``trials`` is a sequence of ``(taus_hat, taus_true)``.  Returns
    ``(mse, n_mismatched)``; mismatched trials use the matched pairs only.
    """
    trials = list(trials)
    if not trials:
        raise ValueError("no trials")
    errs, bad = [], 0
    for hat, true in trials:
        e, m = _sq_error(hat, true)
        bad += not m.matched_all
        errs.append(e)
    return math.fsum(errs) / len(errs), bad


def success_flag(max_error, matched_all=True):
    return bool(matched_all and max_error < SUCCESS_TOL)


def trend_ok(means, ses, inversions_allowed=1):
    """Non-increasing up to ``inversions_allowed`` rises, each within one standard error."""
    rises = 0
    for i in range(1, len(means)):
        step = means[i] - means[i - 1]
        if step <= 0:
            continue
        if step > max(ses[i], ses[i - 1]):
            return False
        rises += 1
    return rises <= inversions_allowed


# -- configuration ----------------------------------------------------------


@dataclass
class ExperimentConfig:
    """Flat experiment description; see README for the TOML schema."""

    name: str = "experiment"
    sweep: str = "K"
    values: list = field(default_factory=lambda: [1, 2, 3])
    sweep2: str = ""
    values2: list = field(default_factory=list)
    k: int = 3
    l: int = 2
    m: int = 14
    b_max: float = 16.0
    min_sep: float = 0.0  # 0 -> 1/M
    snr_db: float = math.inf
    trials: int = 10
    seed: int = 0
    methods: list = field(default_factory=lambda: ["pswf"])
    scheme: str = "random"
    grid: str = "span"
    rank: str = "estimate"
    amplitude: str = "unit"
    tol_gap: float = DEFAULT_TOL
    tol_feas: float = DEFAULT_TOL
    tol_rank: float = 1e-6
    max_iter: int = 200
    real_w: bool = False
    jobs: int = 1
    out: str = "results"

    def __post_init__(self):
        self.validate()

    def validate(self):
        for key, vals in ((self.sweep, self.values), (self.sweep2, self.values2)):
            if key and key not in SWEEPABLE:
                raise ValueError(f"cannot sweep {key!r}; choose from {sorted(SWEEPABLE)}")
            if key and not vals:
                raise ValueError(f"sweep over {key} has no values")
        if self.sweep and self.sweep == self.sweep2:
            raise ValueError("the two sweeps must differ")
        if self.trials < 1:
            raise ValueError("need at least one trial")
        if not self.methods or any(m not in METHODS for m in self.methods):
            raise ValueError(f"methods must be a nonempty subset of {METHODS}")
        if self.scheme not in ("random", "uniform"):
            raise ValueError("scheme must be 'random' or 'uniform'")
        if self.grid not in ("span", "unit"):
            raise ValueError("grid must be 'span' or 'unit'")
        if self.rank not in ("estimate", "known"):
            raise ValueError("rank must be 'estimate' or 'known'")
        if self.b_max <= 0 or self.jobs < 1:
            raise ValueError("b_max and jobs must be positive")
        for p in self.points():
            if p["l"] >= p["m"]:
                raise ValueError(f"L={p['l']} must be below M={p['m']}")
            if p["k"] < 1:
                raise ValueError("K must be at least 1")
            if p["k"] > 1 and (p["k"] - 1) * p["min_sep"] >= 1:
                raise ValueError(f"K={p['k']} spikes do not fit at separation {p['min_sep']}")

    def points(self):
        """Every sweep point as a dict of model parameters, in sweep order."""
        base = {"k": self.k, "l": self.l, "m": self.m, "snr_db": self.snr_db}
        first = [(self.sweep, v) for v in self.values] if self.sweep else [(None, None)]
        second = [(self.sweep2, v) for v in self.values2] if self.sweep2 else [(None, None)]
        out = []
        for k2, v2 in second:
            for k1, v1 in first:
                p = dict(base)
                for key, val in ((k1, v1), (k2, v2)):
                    if key:
                        name = SWEEPABLE[key]
                        p[name] = float(val) if name == "snr_db" else int(val)
                p["min_sep"] = self.min_sep if self.min_sep > 0 else 1.0 / p["m"]
                p["x"] = v1
                p["y"] = v2
                out.append(p)
        return out

    def to_dict(self):
        return dataclasses.asdict(self)


_FIELDS = {f.name: f for f in dataclasses.fields(ExperimentConfig)}


def _coerce(key, value):
    default = _FIELDS[key].default
    if isinstance(default, bool):
        if not isinstance(value, bool):
            raise TypeError(f"{key} must be true or false")
        return value
    if isinstance(default, int):
        if isinstance(value, bool) or not isinstance(value, int):
            raise TypeError(f"{key} must be an integer")
        return value
    if isinstance(default, float):
        if isinstance(value, bool) or not isinstance(value, (int, float)):
            raise TypeError(f"{key} must be a number")
        return float(value)
    if not isinstance(value, str):
        raise TypeError(f"{key} must be a string")
    return value


def config_from_dict(raw, **overrides):
    raw = {**raw, **{k: v for k, v in overrides.items() if v is not None}}
    unknown = sorted(set(raw) - set(_FIELDS))
    if unknown:
        raise ValueError(f"unknown config keys: {', '.join(unknown)}")
    kwargs = {}
    for key, value in raw.items():
        if key in ("values", "values2", "methods"):
            if not isinstance(value, list):
                raise TypeError(f"{key} must be a list")
            kwargs[key] = list(value)
        else:
            kwargs[key] = _coerce(key, value)
    return ExperimentConfig(**kwargs)


def load_config(path, **overrides):
    with open(path, "rb") as fh:
        raw = tomllib.load(fh)
    nested = [k for k, v in raw.items() if isinstance(v, dict)]
    if nested:
        raise ValueError(f"config must be flat; found tables {nested}")
    return config_from_dict(raw, **overrides)


# Desk-scale presets and their full-scale (``full``) versions.
PRESETS = {
    "noiseless": (
        dict(name="noiseless", sweep="K", values=[3], k=3, l=2, m=14, b_max=16.0, trials=20),
        dict(sweep="K", values=list(range(1, 13)), sweep2="M", values2=[20, 30, 40, 50, 63], l=3, b_max=64.0, trials=100),
    ),
    "nmse_k": (
        dict(name="nmse_k", sweep="K", values=[1, 2, 3, 4, 5], sweep2="M", values2=[14, 20], l=2, b_max=16.0,
             trials=10, methods=["pswf", "baseline"]),
        dict(values=list(range(1, 13)), values2=[20, 40, 63], l=3, b_max=64.0, trials=100, grid="unit"),
    ),
    "phase_k": (
        dict(name="phase_k", sweep="K", values=[1, 2, 3, 4, 5, 6], sweep2="M", values2=[10, 14, 20], l=2, b_max=16.0,
             trials=10, methods=["pswf", "baseline"]),
        dict(values=list(range(1, 13)), values2=list(range(20, 64, 4)) + [63], l=3, b_max=64.0, trials=100, grid="unit"),
    ),
    "phase_l": (
        dict(name="phase_l", sweep="L", values=[1, 2, 3, 4], sweep2="M", values2=[10, 14, 20], k=3, b_max=16.0,
             trials=10, methods=["pswf", "baseline"]),
        dict(values=list(range(1, 11)), values2=list(range(20, 64, 4)) + [63], k=4, b_max=64.0, trials=100, grid="unit"),
    ),
    "noisy_snr": (
        dict(name="noisy_snr", sweep="SNR", values=[5.0, 10.0, 15.0, 20.0, 25.0, 30.0], k=4, l=3, m=50, b_max=32.0,
             trials=30, rank="known"),
        dict(b_max=64.0, trials=100),
    ),
    "baseline": (
        dict(name="baseline", sweep="K", values=[3], k=3, l=2, m=20, b_max=16.0, min_sep=0.1, trials=10,
             scheme="uniform", methods=["pswf", "baseline"]),
        dict(values=list(range(1, 13)), m=63, l=3, b_max=64.0, min_sep=0.0, trials=100),
    ),
}


def preset(name, full=False, **overrides):
    if name not in PRESETS:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}")
    desk, big = PRESETS[name]
    raw = dict(desk)
    if full:
        raw.update(big)
        raw["name"] = f"{name}-full"
    return config_from_dict(raw, **overrides)


# -- one trial --------------------------------------------------------------


@lru_cache(maxsize=8)
def _basis(b_max):
    return build_basis(b_max)


@dataclass
class Recovery:
    method: str
    status: str
    z: np.ndarray | None
    taus: np.ndarray
    masses: np.ndarray
    k_hat: int
    objective: float
    solve_s: float
    notes: list = field(default_factory=list)
    solution: object = None


def _localize(t, b_max, rank_k, tol_rank, notes, conj=False):
    t = np.conj(t) if conj else t
    k = rank_k if rank_k is not None else estimate_rank(t, tol_rank)
    k = min(k, t.shape[0] - 1)
    if k == 0:
        return np.zeros(0), np.zeros(0)
    try:
        loc = vandermonde_recover(t, k, b_max)
    except DegenerateSpectrumError as exc:
        notes.append(str(exc))
        loc = exc.partial
    if loc.any_clipped:
        notes.append("delays clipped to [-1/2, 1/2]")
    return loc.taus, loc.masses


def recover(instance, method="pswf", tol_gap=DEFAULT_TOL, tol_feas=DEFAULT_TOL, tol_rank=1e-6, k=None, max_iter=200, real_w=False):
    """Solve, then localize.  ``k`` fixes the model order instead of estimating it."""
    noisy = instance.sigma > 0
    notes = []
    t0 = time.perf_counter()
    if method == "pswf":
        basis = _basis(instance.scheme.b_max)
        if noisy:
            prog = atomic_sdp.build_noisy(instance, basis, real_w=real_w)
        else:
            prog = atomic_sdp.build_noiseless(instance, basis, real_w=real_w)
        sol = atomic_sdp.solve(prog, basis, instance.scheme, tol_gap=tol_gap, tol_feas=tol_feas, max_iter=max_iter, strict=False)
        t_mat, conj = sol.t, False
    elif method == "baseline":
        gamma = atomic_sdp.default_gamma(instance.sigma, instance.m, instance.scheme.b_max) if noisy else None
        sol = solve_grid_blind_sr(instance.y, instance.subspace.s_matrix, instance.scheme, gamma=gamma,
                                  tol_gap=tol_gap, tol_feas=tol_feas, max_iter=max_iter, strict=False)
        t_mat, conj = sol.t, True
    else:
        raise ValueError(f"unknown method {method!r}")
    elapsed = time.perf_counter() - t0
    if sol.status not in ("optimal", "near-optimal"):
        return Recovery(method, sol.status, None, np.zeros(0), np.zeros(0), 0, math.nan, elapsed, notes, sol)
    taus, masses = _localize(t_mat, instance.scheme.b_max, k, tol_rank, notes, conj=conj)
    return Recovery(method, sol.status, sol.z, taus, masses, len(taus), sol.objective, elapsed, notes, sol)


def draw_instance(cfg, p, method, seed):
    """Instance for sweep point ``p``; the baseline always gets a uniform scheme."""
    scheme = cfg.scheme
    b_max = cfg.b_max
    if method == "baseline":
        if cfg.grid == "unit":
            b_max = float(p["m"] - 1)
        scheme = build_uniform_scheme(p["m"], b_max)
    elif scheme == "uniform":
        scheme = build_uniform_scheme(p["m"], b_max)
    return generate_instance(k=p["k"], l=p["l"], m=p["m"], b_max=b_max, min_sep=p["min_sep"], snr_db=p["snr_db"],
                             seed=seed, scheme=scheme, amplitude=cfg.amplitude)


def run_trial(cfg, p, method, trial):
    """One record; never raises for solver trouble."""
    seed = cfg.seed + trial
    rec = {"trial": trial, "seed": seed, "method": method, "K": p["k"], "L": p["l"], "M": p["m"],
           "snr_db": p["snr_db"], "x": p["x"], "y": p["y"]}
    inst = draw_instance(cfg, p, method, seed)
    try:
        r = recover(inst, method, cfg.tol_gap, cfg.tol_feas, cfg.tol_rank,
                    k=p["k"] if cfg.rank == "known" else None, max_iter=cfg.max_iter, real_w=cfg.real_w)
    except Exception as exc:  # a trial failure must not end the sweep
        rec.update(status="error", nmse=math.nan, max_tau_err=math.nan, success=False, solve_ms=0.0,
                   sq_err=math.nan, k_hat=0, taus_hat=[], taus_true=inst.spikes.taus.tolist(),
                   notes=[f"{type(exc).__name__}: {exc}"])
        return rec
    m = match_spikes(r.taus, inst.spikes.taus)
    sq, _ = _sq_error(r.taus, inst.spikes.taus)
    err = m.max_error if m.pairing else math.nan
    rec.update(
        status=r.status,
        nmse=nmse(r.z, inst.z_true) if r.z is not None else math.nan,
        max_tau_err=err,
        success=r.status == "optimal" and success_flag(m.max_error, m.matched_all),
        solve_ms=round(1000 * r.solve_s, 3),
        sq_err=sq,
        k_hat=r.k_hat,
        taus_hat=r.taus.tolist(),
        taus_true=inst.spikes.taus.tolist(),
        notes=r.notes,
    )
    return rec


def _task(args):
    cfg, p, method, trial = args
    return run_trial(cfg, p, method, trial)


# -- sweeps -----------------------------------------------------------------


@dataclass
class ExperimentResult:
    config: ExperimentConfig
    records: list
    aggregates: list
    started: float = 0.0
    finished: float = 0.0

    def aggregate_for(self, method, x=None, y=None):
        for a in self.aggregates:
            if a["method"] == method and (x is None or a["x"] == x) and (y is None or a["y"] == y):
                return a
        raise KeyError((method, x, y))


def _finite(vals):
    return [v for v in vals if not math.isnan(v)]


def aggregate(records, method, x, y):
    """Summary of one (method, sweep point) group; recomputable from the records."""
    group = [r for r in records if r["method"] == method and r["x"] == x and r["y"] == y]
    n = len(group)
    opt = [r for r in group if r["status"] == "optimal"]
    nm = _finite([r["nmse"] for r in opt])
    sq = _finite([r["sq_err"] for r in group])
    mse = math.fsum(sq) / len(sq) if sq else math.nan
    se = math.nan
    if len(sq) > 1:
        se = float(np.std(sq, ddof=1) / math.sqrt(len(sq)))
    first = group[0] if group else {}
    return {
        "method": method,
        "x": x,
        "y": y,
        "K": first.get("K"),
        "L": first.get("L"),
        "M": first.get("M"),
        "snr_db": first.get("snr_db"),
        "n": n,
        "n_optimal": len(opt),
        "n_excluded": n - len(opt),
        "mean_nmse": math.fsum(nm) / len(nm) if nm else math.nan,
        "median_nmse": float(np.median(nm)) if nm else math.nan,
        "success_rate": sum(r["success"] for r in group) / n if n else math.nan,
        "spike_mse": mse,
        "spike_mse_se": se,
        "n_mismatched": sum(r["k_hat"] != r["K"] for r in group),
    }


def _tasks(cfg):
    return [(cfg, p, method, i) for p in cfg.points() for method in cfg.methods for i in range(cfg.trials)]


def run_monte_carlo(cfg, jobs=None, progress=None):
    """Run every trial of ``cfg``; records come back in task order whatever the pool does."""
    jobs = cfg.jobs if jobs is None else jobs
    tasks = _tasks(cfg)
    started = time.time()
    if jobs <= 1:
        records = []
        for t in tasks:
            records.append(_task(t))
            if progress:
                progress(len(records), len(tasks))
    else:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            records = []
            for rec in pool.map(_task, tasks, chunksize=1):
                records.append(rec)
                if progress:
                    progress(len(records), len(tasks))
    aggs = [aggregate(records, m, p["x"], p["y"]) for p in cfg.points() for m in cfg.methods]
    return ExperimentResult(cfg, records, aggs, started, time.time())


# -- output -----------------------------------------------------------------


def _fmt(v):
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, float):
        if math.isnan(v):
            return "nan"
        if math.isinf(v):
            return "inf" if v > 0 else "-inf"
        return repr(v)
    return str(v)


def trials_csv(records, columns=CSV_COLUMNS):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(columns)
    for r in records:
        w.writerow([_fmt(r[c]) for c in columns])
    return buf.getvalue()


def _json_safe(obj):
    if isinstance(obj, float):
        if math.isnan(obj):
            return None
        if math.isinf(obj):
            return "inf" if obj > 0 else "-inf"
        return obj
    if isinstance(obj, dict):
        return {k: _json_safe(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_json_safe(v) for v in obj]
    if isinstance(obj, np.generic):
        return _json_safe(obj.item())
    return obj


def _dump(path, obj):
    with open(path, "w") as fh:
        json.dump(_json_safe(obj), fh, indent=1, sort_keys=True)
        fh.write("\n")


def _curve_csv(cfg, aggs):
    cols = ["method", cfg.sweep or "point"] + ([cfg.sweep2] if cfg.sweep2 else []) + [
        "n", "n_optimal", "n_excluded", "mean_nmse", "median_nmse", "success_rate", "spike_mse", "spike_mse_se"]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(cols)
    for a in aggs:
        row = [a["method"], _fmt(a["x"])] + ([_fmt(a["y"])] if cfg.sweep2 else [])
        row += [_fmt(a[c]) for c in cols[len(row):]]
        w.writerow(row)
    return buf.getvalue()


def _grid_csv(cfg, aggs, method):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([f"{cfg.sweep2}\\{cfg.sweep}"] + [_fmt(v) for v in cfg.values])
    for y in cfg.values2:
        row = [_fmt(y)]
        for x in cfg.values:
            a = next(a for a in aggs if a["method"] == method and a["x"] == x and a["y"] == y)
            row.append(_fmt(a["success_rate"]))
        w.writerow(row)
    return buf.getvalue()


def _comparison_csv(cfg, aggs):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    head = [cfg.sweep or "point"] + ([cfg.sweep2] if cfg.sweep2 else [])
    w.writerow(head + ["pswf_mean_nmse", "baseline_mean_nmse", "pswf_success_rate", "baseline_success_rate"])
    for p in cfg.points():
        a = next(a for a in aggs if a["method"] == "pswf" and a["x"] == p["x"] and a["y"] == p["y"])
        b = next(a for a in aggs if a["method"] == "baseline" and a["x"] == p["x"] and a["y"] == p["y"])
        row = [_fmt(p["x"])] + ([_fmt(p["y"])] if cfg.sweep2 else [])
        w.writerow(row + [_fmt(a["mean_nmse"]), _fmt(b["mean_nmse"]), _fmt(a["success_rate"]), _fmt(b["success_rate"])])
    return buf.getvalue()


def write_results(result, out_dir=None):
    """Write every output file; returns the paths by role."""
    cfg = result.config
    out = out_dir or cfg.out
    os.makedirs(out, exist_ok=True)
    paths = {}

    def put(role, name, text):
        path = os.path.join(out, name)
        with open(path, "w", newline="") as fh:
            fh.write(text)
        paths[role] = path

    put("trials_csv", "trials.csv", trials_csv(result.records))
    put("curve", "curve.csv", _curve_csv(cfg, result.aggregates))
    if cfg.sweep2:
        for m in cfg.methods:
            put(f"grid_{m}", f"success_grid_{m}.csv", _grid_csv(cfg, result.aggregates, m))
    if set(cfg.methods) == set(METHODS):
        put("comparison", "comparison.csv", _comparison_csv(cfg, result.aggregates))
    paths["trials_json"] = os.path.join(out, "trials.json")
    _dump(paths["trials_json"], [{k: v for k, v in r.items() if k not in TIMING_COLUMNS} for r in result.records])
    paths["aggregate"] = os.path.join(out, "aggregate.json")
    _dump(paths["aggregate"], {"config": cfg.to_dict(), "aggregates": result.aggregates})
    paths["metadata"] = os.path.join(out, "metadata.json")
    _dump(paths["metadata"], {
        "started": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(result.started)),
        "finished": time.strftime("%Y-%m-%dT%H:%M:%S", time.localtime(result.finished)),
        "wall_s": result.finished - result.started,
        "total_solve_ms": math.fsum(r["solve_ms"] for r in result.records),
        "python": sys.version.split()[0],
        "numpy": np.__version__,
    })
    return paths
