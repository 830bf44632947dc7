"""Command line entry point: ``blindsr <command> ...``."""

from __future__ import annotations

import argparse
import dataclasses
import json
import math
import os
import sys

import numpy as np
import scipy.linalg as la

from . import __version__
from .conic import DEFAULT_TOL
from .experiments import (
    PRESETS,
    config_from_dict,
    draw_instance,
    load_config,
    nmse,
    preset,
    recover,
    run_monte_carlo,
    write_results,
)
from .localization import estimate_rank, localize, match_spikes
from .pswf import build_basis
from .signal_model import decode_complex, encode_complex, load_instance, save_instance


def _snr(text):
    val = float(text)
    if math.isnan(val):
        raise argparse.ArgumentTypeError("SNR cannot be nan")
    return val


def _seed(text):
    val = int(text)
    if not 0 <= val < 2**64:
        raise argparse.ArgumentTypeError("seed must fit in an unsigned 64-bit integer")
    return val


def _write_json(obj, path):
    text = json.dumps(obj, indent=1)
    if path in (None, "-"):
        print(text)
    else:
        os.makedirs(os.path.dirname(os.path.abspath(path)), exist_ok=True)
        with open(path, "w") as fh:
            fh.write(text + "\n")


def _finite_or_str(x):
    x = float(x)
    return x if math.isfinite(x) else str(x)


def _methods(arg, default):
    if arg is None:
        return default
    return ["pswf", "baseline"] if arg == "both" else [arg]


# -- commands ---------------------------------------------------------------


def cmd_solve(args):
    inst = load_instance(args.instance)
    out = {"instance": os.path.abspath(args.instance), "results": []}
    for method in _methods(args.method, ["pswf"]):
        r = recover(inst, method, tol_gap=args.tol_gap, tol_feas=args.tol_gap, tol_rank=args.tol_rank, k=args.k)
        res = {
            "method": method,
            "status": r.status,
            "objective": _finite_or_str(r.objective),
            "solve_ms": round(1000 * r.solve_s, 3),
            "taus": r.taus.tolist(),
            "masses": r.masses.tolist(),
            "notes": r.notes,
        }
        if r.z is not None:
            res["Z"] = encode_complex(r.z)
            # first row of the recovered Toeplitz moment matrix
            moments = r.solution.moments.v if method == "pswf" else r.solution.u
            res["v"] = encode_complex(moments)
            res["nmse"] = nmse(r.z, inst.z_true)
            m = match_spikes(r.taus, inst.spikes.taus)
            res["max_tau_err"] = _finite_or_str(m.max_error)
        out["results"].append(res)
    _write_json(out, args.out)
    return 0 if all(r["status"] in ("optimal", "near-optimal") for r in out["results"]) else 1


def cmd_generate(args):
    if args.config:
        cfg = load_config(args.config, seed=args.seed, snr_db=args.snr)
    else:
        raw = {"k": args.k, "l": args.l, "m": args.m, "b_max": args.b_max, "trials": args.trials, "sweep": ""}
        cfg = config_from_dict(raw, seed=args.seed, snr_db=args.snr)
    os.makedirs(args.out, exist_ok=True)
    methods = _methods(args.method, cfg.methods)
    n = 0
    for i, p in enumerate(cfg.points()):
        for method in methods:
            for t in range(cfg.trials):
                inst = draw_instance(cfg, p, method, cfg.seed + t)
                name = f"instance_p{i:03d}_{method}_t{t:04d}.json"
                save_instance(inst, os.path.join(args.out, name))
                n += 1
    print(f"wrote {n} instance files to {args.out}")
    return 0


def _progress(done, total):
    if sys.stderr.isatty() or done == total or done % 10 == 0:
        print(f"\r{done}/{total} trials", end="\n" if done == total else "", file=sys.stderr, flush=True)


def cmd_sweep(args):
    overrides = {"seed": args.seed, "tol_gap": args.tol_gap, "tol_rank": args.tol_rank,
                 "jobs": args.jobs, "out": args.out, "trials": args.trials}
    if args.method:
        overrides["methods"] = _methods(args.method, None)
    if args.tol_gap is not None:
        overrides["tol_feas"] = args.tol_gap
    if args.config:
        if args.full:
            raise SystemExit("--full applies to presets only")
        cfg = load_config(args.config, **overrides)
    else:
        cfg = preset(args.preset or "noiseless", full=args.full, **overrides)
    if args.snr is not None:
        # a fixed SNR replaces an SNR sweep
        changes = {"snr_db": args.snr}
        if cfg.sweep == "SNR":
            changes.update(sweep="", values=[])
        if cfg.sweep2 == "SNR":
            changes.update(sweep2="", values2=[])
        cfg = dataclasses.replace(cfg, **changes)
    result = run_monte_carlo(cfg, progress=_progress)
    paths = write_results(result)
    for a in result.aggregates:
        label = " ".join(f"{k}={a[k]}" for k in ("K", "L", "M", "snr_db"))
        print(f"{a['method']:8s} {label}  success={a['success_rate']:.3f}  mean_nmse={a['mean_nmse']:.3e}  "
              f"spike_mse={a['spike_mse']:.4g}  excluded={a['n_excluded']}")
    print(f"results in {os.path.dirname(paths['trials_csv'])}")
    return 0


def cmd_pswf(args):
    basis = build_basis(args.b_max, args.epsilon)
    rows = [{"j": j, "eigenvalue_re": float(lam.real), "eigenvalue_im": float(lam.imag), "abs": float(abs(lam))}
            for j, lam in enumerate(basis.eigenvalues)]
    doc = {"b_max": basis.b_max, "c": basis.c, "epsilon": basis.epsilon, "d": basis.d, "theta0": basis.theta0,
           "n_functions": basis.n_functions, "eigenvalues": rows}
    if args.format == "json":
        _write_json(doc, args.out)
        return 0
    lines = [f"# b_max={basis.b_max} c={basis.c:.6f} d={basis.d} theta0={basis.theta0:.6f} epsilon={basis.epsilon}",
             "j,eigenvalue_re,eigenvalue_im,abs"]
    lines += [f"{r['j']},{r['eigenvalue_re']!r},{r['eigenvalue_im']!r},{r['abs']!r}" for r in rows]
    text = "\n".join(lines) + "\n"
    if args.out in (None, "-"):
        sys.stdout.write(text)
    else:
        with open(args.out, "w") as fh:
            fh.write(text)
    return 0


def _read_t(path):
    """T from .npy, or JSON with either a full matrix ``T`` or its first row ``v``."""
    if path.endswith(".npy"):
        return np.load(path)
    with open(path) as fh:
        doc = json.load(fh)
    if "T" in doc:
        return decode_complex(doc["T"])
    if "v" in doc:
        v = decode_complex(doc["v"])
        return la.toeplitz(np.conj(v), v)
    raise ValueError("expected a 'T' matrix or a 'v' moment vector")


def cmd_localize(args):
    t = _read_t(args.t_matrix)
    loc = localize(t, args.b_max, rel_tol=args.tol_rank, k=args.k)
    doc = {"rank": 0, "taus": [], "masses": []}
    if loc is not None:
        doc = {"rank": loc.rank_used, "taus": loc.taus.tolist(), "masses": loc.masses.tolist(),
               "thetas": loc.thetas.tolist(), "residual": loc.residual, "clipped": loc.clipped.tolist()}
    doc["estimated_rank"] = estimate_rank(t, args.tol_rank)
    _write_json(doc, args.out)
    return 0


# -- parser -----------------------------------------------------------------


def build_parser():
    p = argparse.ArgumentParser(prog="blindsr", description="Blind super-resolution with arbitrary Fourier sampling.")
    p.add_argument("--version", action="version", version=f"blindsr {__version__}")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("solve", help="solve one instance file and write a solution JSON")
    s.add_argument("instance")
    s.add_argument("--method", choices=["pswf", "baseline", "both"])
    s.add_argument("--out", help="output JSON path (default stdout)")
    s.add_argument("--tol-gap", type=float, default=DEFAULT_TOL)
    s.add_argument("--tol-rank", type=float, default=1e-6)
    s.add_argument("--k", type=int, help="fix the model order instead of estimating it")
    s.set_defaults(func=cmd_solve)

    g = sub.add_parser("generate", help="draw seeded instance files")
    g.add_argument("--config")
    g.add_argument("--seed", type=_seed)
    g.add_argument("--snr", type=_snr, help="dB, or inf for noiseless")
    g.add_argument("--method", choices=["pswf", "baseline", "both"])
    g.add_argument("--k", type=int, default=3)
    g.add_argument("--l", type=int, default=2)
    g.add_argument("--m", type=int, default=14)
    g.add_argument("--b-max", type=float, default=16.0)
    g.add_argument("--trials", type=int, default=1)
    g.add_argument("--out", default="instances")
    g.set_defaults(func=cmd_generate)

    w = sub.add_parser("sweep", help="run a Monte-Carlo experiment")
    src = w.add_mutually_exclusive_group()
    src.add_argument("--config")
    src.add_argument("--preset", choices=sorted(PRESETS))
    w.add_argument("--full", action="store_true", help="full-scale version of the preset (hours of CPU)")
    w.add_argument("--seed", type=_seed)
    w.add_argument("--out")
    w.add_argument("--method", choices=["pswf", "baseline", "both"])
    w.add_argument("--tol-gap", type=float)
    w.add_argument("--tol-rank", type=float)
    w.add_argument("--jobs", type=int)
    w.add_argument("--trials", type=int)
    w.add_argument("--snr", type=_snr, help="fixed SNR in dB (inf for noiseless)")
    w.set_defaults(func=cmd_sweep)

    b = sub.add_parser("pswf", help="dump the PSWF basis table")
    b.add_argument("--b-max", type=float, required=True)
    b.add_argument("--epsilon", type=float, default=1e-10)
    b.add_argument("--format", choices=["csv", "json"], default="csv")
    b.add_argument("--out")
    b.set_defaults(func=cmd_pswf)

    z = sub.add_parser("localize", help="spikes from a Toeplitz moment matrix file")
    z.add_argument("t_matrix")
    z.add_argument("--b-max", type=float, required=True)
    z.add_argument("--tol-rank", type=float, default=1e-6)
    z.add_argument("--k", type=int)
    z.add_argument("--out")
    z.set_defaults(func=cmd_localize)
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ValueError, TypeError, OSError) as exc:
        print(f"blindsr: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
