"""Command line front end.

Subcommands: simulate, fit, resume, batch-fit, compare, bound, fpca.
Exit codes: 0 on success, 2 for malformed or out-of-domain input data,
1 for any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from dataclasses import fields as dataclass_fields

import numpy as np

from .bandwidth import efficiency_lower_bound
from .batch import batch_fit
from .blockio import (iter_blocks, load_estimator, save_snapshot,
                      serialize_block)
from .engine import FitConfig, OnlineEstimator
from .errors import ParseError, ShapeMismatch, StreamFdaError
from .fpca import fpca, write_fpca_csv
from .kernels import GridSpec
from .simulate import SimConfig, generate_block, run_experiment, write_report
from .stream import SurfaceEstimate

_FIT_FIELDS = {f.name for f in dataclass_fields(FitConfig)}


@contextmanager
def _open_in(path):
    if path in (None, "-"):
        yield sys.stdin
    else:
        with open(path, "r", encoding="utf-8") as fh:
            yield fh


@contextmanager
def _open_out(path):
    if path in (None, "-"):
        yield sys.stdout
    else:
        with open(path, "w", encoding="utf-8", newline="") as fh:
            yield fh


def _fit_config(args) -> FitConfig:
    settings = {}
    if getattr(args, "config", None):
        with open(args.config, "r", encoding="utf-8") as fh:
            loaded = json.load(fh)
        if not isinstance(loaded, dict):
            raise StreamFdaError("config file must hold a JSON object")
        unknown = sorted(set(loaded) - _FIT_FIELDS)
        if unknown:
            raise StreamFdaError(f"unknown config keys: {', '.join(unknown)}")
        settings.update(loaded)
    for name in _FIT_FIELDS:
        value = getattr(args, name, None)
        if value is not None:
            settings[name] = value
    return FitConfig(**settings)


def _add_fit_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON file with fit settings; explicit "
                                    "flags take precedence")
    p.add_argument("--L", type=int, dest="L", help="candidate bank size")
    p.add_argument("--J-mean", type=int, dest="J_mean")
    p.add_argument("--J-cov", type=int, dest="J_cov")
    p.add_argument("--kernel", dest="kernel",
                   choices=["epanechnikov", "quartic", "triweight"])
    p.add_argument("--curve-points", type=int, dest="curve_points")
    p.add_argument("--surface-points", type=int, dest="surface_points")
    p.add_argument("--lo", type=float, dest="lo")
    p.add_argument("--hi", type=float, dest="hi")
    p.add_argument("--design-mode", dest="design_mode",
                   choices=["sparse", "dense"])
    p.add_argument("--freeze-after", type=int, dest="freeze_after")
    p.add_argument("--pilot-curvature-rate", type=float, dest="G")
    p.add_argument("--pilot-noise-rate", type=float, dest="R")
    p.add_argument("--trim", type=float, dest="trim")
    p.add_argument("--presmooth-scale", type=float, dest="presmooth_scale")
    p.add_argument("--h-mu", type=float, dest="fixed_h_mu",
                   help="pin the mean bandwidth instead of selecting it")
    p.add_argument("--h-gamma", type=float, dest="fixed_h_gamma",
                   help="pin the covariance bandwidth")


def _write_curve_csv(path, K: int, curve) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh)
        w.writerow(["K", "t", "value"])
        for t, v in zip(curve.grid.points, curve.values):
            w.writerow([K, f"{t:.10g}", f"{v:.10g}"])


def _write_surface_csv(path, K: int, surface) -> None:
    with _open_out(path) as fh:
        w = csv.writer(fh)
        w.writerow(["K", "s", "t", "value"])
        pts = surface.grid.points
        for i, s in enumerate(pts):
            for j, t in enumerate(pts):
                w.writerow([K, f"{s:.10g}", f"{t:.10g}",
                            f"{surface.values[i, j]:.10g}"])


def _emit_estimates(args, K: int, curve, surface) -> None:
    if getattr(args, "curve_out", None) and curve is not None:
        _write_curve_csv(args.curve_out, K, curve)
    if getattr(args, "surface_out", None) and surface is not None:
        _write_surface_csv(args.surface_out, K, surface)


def _int_list(text: str) -> list[int]:
    return [int(part) for part in text.split(",") if part.strip()]


# -- subcommands ----------------------------------------------------------


def _cmd_simulate(args) -> int:
    sim = SimConfig(design=args.design, sigma=args.sigma,
                    n_components=args.n_components,
                    lambda_scale=args.lambda_scale,
                    lambda_decay=args.lambda_decay,
                    K_max=args.blocks, seed=args.seed, mean=args.mean,
                    n_mean=args.n_mean, n_sd=args.n_sd,
                    m_mean=args.m_mean, m_sd=args.m_sd)
    with _open_out(args.out) as fh:
        for k in range(1, args.blocks + 1):
            fh.write(serialize_block(generate_block(sim, k, args.rep)) + "\n")
    return 0


def _run_stream(est: OnlineEstimator, args) -> None:
    lo, hi = est.config.lo, est.config.hi
    with _open_in(args.infile) as fh:
        for block in iter_blocks(fh, lo, hi):
            est.step(block)


def _finish_fit(est: OnlineEstimator, args, snapshot_path) -> int:
    if snapshot_path:
        save_snapshot(est.state_dict(), snapshot_path)
    _emit_estimates(args, est.blocks_seen, est.last_curve, est.last_surface)
    h_mu = "none" if est.h_mu is None else f"{est.h_mu:.6g}"
    h_ga = "none" if est.h_gamma is None else f"{est.h_gamma:.6g}"
    print(f"K={est.blocks_seen} h_mu={h_mu} h_gamma={h_ga}")
    return 0


def _cmd_fit(args) -> int:
    est = OnlineEstimator(_fit_config(args))
    _run_stream(est, args)
    return _finish_fit(est, args, args.snapshot)


def _cmd_resume(args) -> int:
    est = load_estimator(args.snapshot)
    _run_stream(est, args)
    out = args.snapshot_out if args.snapshot_out else args.snapshot
    return _finish_fit(est, args, out)


def _cmd_batch_fit(args) -> int:
    config = _fit_config(args)
    with _open_in(args.infile) as fh:
        blocks = list(iter_blocks(fh, config.lo, config.hi))
    if not blocks:
        raise StreamFdaError("batch-fit needs at least one block")
    result = batch_fit(blocks, config, h_mu=config.fixed_h_mu,
                       h_gamma=config.fixed_h_gamma)
    _emit_estimates(args, len(blocks), result.curve, result.surface)
    h_ga = "none" if result.h_gamma is None else f"{result.h_gamma:.6g}"
    print(f"K={len(blocks)} h_mu={result.h_mu:.6g} h_gamma={h_ga}")
    return 0


def _cmd_compare(args) -> int:
    sim = SimConfig(design=args.design, K_max=args.blocks, n_reps=args.reps,
                    seed=args.seed, sigma=args.sigma, mean=args.mean)
    checkpoints = _int_list(args.checkpoints) if args.checkpoints else None
    report = run_experiment(sim, L=_int_list(args.L), mode=args.mode,
                            checkpoints=checkpoints,
                            pinned_h_mu=args.fixed_h_mu,
                            pinned_h_gamma=args.fixed_h_gamma)
    paths = write_report(report, args.out)
    for Lv in report.L_values:
        em, ec = report.final_eff(Lv)
        print(f"L={Lv} K={report.checkpoints[-1]} "
              f"eff_mean={em:.4f} eff_cov={ec:.4f}")
    for p in paths:
        print(f"wrote {p}")
    return 0


def _cmd_bound(args) -> int:
    for L in range(1, args.max_L + 1):
        for d in (1, 2):
            print(f"L={L} d={d} bound={efficiency_lower_bound(L, d):.5f}")
    return 0


def _load_surface_csv(path) -> SurfaceEstimate:
    with _open_in(path) as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise StreamFdaError("surface CSV is empty")
    required = {"s", "t", "value"}
    if not required <= set(rows[0]):
        raise StreamFdaError("surface CSV needs columns s, t, value")
    s = np.array([float(r["s"]) for r in rows])
    t = np.array([float(r["t"]) for r in rows])
    v = np.array([float(r["value"]) for r in rows])
    pts = np.unique(s)
    n = len(pts)
    if len(np.unique(t)) != n or len(rows) != n * n:
        raise StreamFdaError("surface CSV does not cover a full square grid")
    gaps = np.diff(pts)
    if n < 2 or np.max(np.abs(gaps - gaps[0])) > 1e-9 * (pts[-1] - pts[0]):
        raise StreamFdaError("surface CSV grid is not uniform")
    grid = GridSpec(float(pts[0]), float(pts[-1]), n)
    values = np.full((n, n), np.nan)
    si = np.searchsorted(pts, s)
    ti = np.searchsorted(pts, t)
    values[si, ti] = v
    if np.any(np.isnan(values)):
        raise StreamFdaError("surface CSV has missing grid cells")
    return SurfaceEstimate(grid, values, bandwidth=0.0, block_index=0)


def _cmd_fpca(args) -> int:
    if args.snapshot:
        est = load_estimator(args.snapshot)
        surface = est.last_surface
        if surface is None:
            raise StreamFdaError("snapshot holds no covariance surface yet")
    elif args.infile:
        surface = _load_surface_csv(args.infile)
    else:
        raise StreamFdaError("fpca needs --snapshot or --in")
    try:
        result = fpca(surface.values, surface.grid)
    except ShapeMismatch as exc:
        raise StreamFdaError(str(exc)) from None
    n_show = result.n_components
    if args.components is not None:
        n_show = min(n_show, args.components)
    if args.out:
        write_fpca_csv(result, args.out)
    for j in range(n_show):
        print(f"lambda{j + 1}={result.eigenvalues[j]:.8g} "
              f"fve={result.fve[j]:.6f}")
    if result.degenerate:
        print("surface is degenerate (no positive eigenvalues)")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="streamfda",
        description="Streaming mean and covariance estimation for "
                    "irregular functional data.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="write a synthetic block stream")
    p.add_argument("--design", choices=["sparse", "dense", "custom"],
                   default="sparse")
    p.add_argument("--blocks", type=int, default=200)
    p.add_argument("--rep", type=int, default=0)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--mean", choices=["sine", "linear", "zero"],
                   default="sine")
    p.add_argument("--n-components", type=int, default=10)
    p.add_argument("--lambda-scale", type=float, default=0.4)
    p.add_argument("--lambda-decay", type=float, default=2.0)
    p.add_argument("--n-mean", type=float)
    p.add_argument("--n-sd", type=float)
    p.add_argument("--m-mean", type=float)
    p.add_argument("--m-sd", type=float)
    p.add_argument("--out", "-o")
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("fit", help="stream blocks through the online "
                                   "estimator")
    p.add_argument("--in", dest="infile", help="JSON-lines block stream "
                                               "(default stdin)")
    p.add_argument("--snapshot", help="write the estimator state here")
    p.add_argument("--curve-out", dest="curve_out")
    p.add_argument("--surface-out", dest="surface_out")
    _add_fit_flags(p)
    p.set_defaults(func=_cmd_fit)

    p = sub.add_parser("resume", help="continue from a snapshot")
    p.add_argument("--snapshot", required=True)
    p.add_argument("--in", dest="infile")
    p.add_argument("--snapshot-out", dest="snapshot_out",
                   help="default: overwrite the input snapshot")
    p.add_argument("--curve-out", dest="curve_out")
    p.add_argument("--surface-out", dest="surface_out")
    p.set_defaults(func=_cmd_resume)

    p = sub.add_parser("batch-fit", help="pooled fit over a whole stream")
    p.add_argument("--in", dest="infile")
    p.add_argument("--curve-out", dest="curve_out")
    p.add_argument("--surface-out", dest="surface_out")
    _add_fit_flags(p)
    p.set_defaults(func=_cmd_batch_fit)

    p = sub.add_parser("compare", help="Monte Carlo online-versus-batch "
                                       "efficiency report")
    p.add_argument("--design", choices=["sparse", "dense"], default="sparse")
    p.add_argument("--blocks", type=int, default=200)
    p.add_argument("--reps", type=int, default=20)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--sigma", type=float, default=0.5)
    p.add_argument("--mean", choices=["sine", "linear", "zero"],
                   default="sine")
    p.add_argument("--L", default="5", help="comma-separated bank sizes")
    p.add_argument("--checkpoints", help="comma-separated block counts "
                                         "(default: every 40)")
    p.add_argument("--mode", choices=["plugin", "pinned"], default="plugin")
    p.add_argument("--h-mu", type=float, dest="fixed_h_mu")
    p.add_argument("--h-gamma", type=float, dest="fixed_h_gamma")
    p.add_argument("--out", "-o", required=True)
    p.set_defaults(func=_cmd_compare)

    p = sub.add_parser("bound", help="print the efficiency lower bounds")
    p.add_argument("--max-L", type=int, default=20, dest="max_L")
    p.set_defaults(func=_cmd_bound)

    p = sub.add_parser("fpca", help="eigendecompose a covariance surface")
    p.add_argument("--snapshot", help="estimator snapshot to read")
    p.add_argument("--in", dest="infile", help="surface CSV with s,t,value")
    p.add_argument("--components", type=int)
    p.add_argument("--out", "-o")
    p.set_defaults(func=_cmd_fpca)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ParseError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except StreamFdaError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (OSError, ValueError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
