"""Command line entry points.

Subcommands cover the individual stages (synth, reconstruct, measure, ted,
lrp, fpca, commonality) and the config-driven full pipeline (run). All
quantitative outputs are CSV/JSON; plots are opt-in.
"""

from __future__ import annotations

import argparse
import json
import sys
import warnings
from glob import glob
from pathlib import Path

import numpy as np

from . import fda, pipeline, synth, ted
from .commonality import ICA, PCA, CrossSection
from .commonality import commonality as run_commonality
from .fpca import fpca as run_fpca
from .fpca import write_fpca
from .liquidity import DEFAULT_R_CAP, SPREAD, XLM, MeasureSpec
from .lob import read_events, read_features, read_series, replay
from .lob import sample_series, write_features, write_series


def _add_synth(sub):
    p = sub.add_parser("synth", help="generate a synthetic event panel")
    p.add_argument("--config", help="TOML file with a [synth] table")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--assets", type=int)
    p.add_argument("--days", type=int)
    p.add_argument("--seed", type=int)
    p.add_argument("--session-s", type=int, dest="session_s")
    p.set_defaults(func=cmd_synth)


def cmd_synth(args) -> int:
    spec = synth.SynthSpec()
    if args.config:
        cfg = pipeline.config_from_toml(args.config)
        if cfg.synth_spec is not None:
            spec = cfg.synth_spec
    overrides = {}
    if args.assets is not None:
        overrides["n_assets"] = args.assets
    if args.days is not None:
        overrides["days"] = args.days
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.session_s is not None:
        overrides["session_s"] = args.session_s
    if overrides:
        from dataclasses import replace
        spec = replace(spec, **overrides)
    manifest = synth.generate_panel(spec, args.out)
    n_files = sum(len(v) for v in manifest["files"].values())
    print(f"wrote {n_files} event files for {len(manifest['symbols'])} assets "
          f"x {manifest['days']} days under {args.out}")
    return 0


def _add_reconstruct(sub):
    p = sub.add_parser("reconstruct",
                       help="replay an event file and dump the book")
    p.add_argument("--events", required=True)
    p.add_argument("--at", type=int, default=None,
                   help="stop after events up to this ms timestamp")
    p.add_argument("--policy", choices=["reject", "match"], default="reject")
    p.add_argument("--out", help="write book JSON here (default stdout)")
    p.set_defaults(func=cmd_reconstruct)


def cmd_reconstruct(args) -> int:
    events = read_events(args.events)
    if args.at is not None:
        events = [e for e in events if e.timestamp <= args.at]
    book = replay(events, crossed_policy=args.policy)
    state = book.book_state()
    doc = {
        "n_events": len(events),
        "best_bid": None if state.best_bid is None else state.best_bid.price,
        "best_ask": None if state.best_ask is None else state.best_ask.price,
        "bids": [[lv.price, lv.volume, lv.orders] for lv in state.bids],
        "asks": [[lv.price, lv.volume, lv.orders] for lv in state.asks],
    }
    text = json.dumps(doc, indent=1, sort_keys=True) + "\n"
    if args.out:
        Path(args.out).write_text(text)
        print(f"book with {len(state.bids)} bid / {len(state.asks)} ask "
              f"levels -> {args.out}")
    else:
        sys.stdout.write(text)
    return 0


def _add_measure(sub):
    p = sub.add_parser("measure", help="sample a liquidity measure series")
    p.add_argument("--events", required=True)
    p.add_argument("--measure", choices=[SPREAD, XLM], default=SPREAD)
    p.add_argument("--interval-ms", type=int, default=1000)
    p.add_argument("--r-cap", type=float, default=DEFAULT_R_CAP)
    p.add_argument("--policy", choices=["reject", "match"], default="reject")
    p.add_argument("--out", required=True, help="series CSV path")
    p.add_argument("--features-out", help="book covariate CSV path")
    p.set_defaults(func=cmd_measure)


def cmd_measure(args) -> int:
    events = read_events(args.events)
    if not events:
        print("no events in file", file=sys.stderr)
        return 1
    session = (events[0].timestamp, events[-1].timestamp)
    spec = MeasureSpec(kind=args.measure, r_cap=args.r_cap)
    series, feats = sample_series(events, spec, args.interval_ms, session,
                                  crossed_policy=args.policy,
                                  return_features=True,
                                  asset=Path(args.events).stem)
    write_series(args.out, series)
    if args.features_out:
        write_features(args.features_out, series, feats)
    finite = np.isfinite(series.values).sum()
    print(f"{len(series)} samples ({finite} finite) -> {args.out}")
    return 0


def _add_ted(sub):
    p = sub.add_parser("ted", help="extract threshold exceedance durations")
    p.add_argument("--series", required=True)
    p.add_argument("--features", help="book covariate CSV from measure")
    p.add_argument("--out", required=True, help="records CSV path")
    p.set_defaults(func=cmd_ted)


def cmd_ted(args) -> int:
    series = read_series(args.series)
    feats = read_features(args.features) if args.features else None
    thresholds = ted.decile_thresholds(series)
    per_thr = ted.build_records(series, thresholds, feats)
    ted.write_records(args.out, per_thr)
    counts = ", ".join(str(len(r)) for r in per_thr)
    print(f"episodes per decile threshold: {counts} -> {args.out}")
    return 0


def _add_lrp(sub):
    p = sub.add_parser("lrp", help="fit per-threshold duration models and "
                                   "emit a smoothed resilience profile")
    p.add_argument("--series", required=True)
    p.add_argument("--features", help="book covariate CSV from measure")
    p.add_argument("--out", required=True, help="fit bundle JSON path")
    p.add_argument("--curve-out", help="smoothed curve JSON path")
    p.add_argument("--lambda", dest="lam", type=float,
                   default=fda.DEFAULT_LAMBDA)
    p.add_argument("--gcv", action="store_true",
                   help="also report the GCV-selected lambda on a default grid")
    p.set_defaults(func=cmd_lrp)


def cmd_lrp(args) -> int:
    series = read_series(args.series)
    feats = read_features(args.features) if args.features else None
    thresholds = ted.decile_thresholds(series)
    per_thr = ted.build_records(series, thresholds, feats)
    fits = [ted.fit_lognormal_aft(recs) for recs in per_thr]
    points = ted.lrp_points(fits)
    meta = {"series": args.series, "lambda": args.lam}
    if args.gcv:
        res = fda.gcv(points.decile_index, points.values,
                      fda.BsplineBasis.with_segments(),
                      fda.default_lambda_grid())
        meta["gcv_lambda"] = res.best_lambda
        print(f"GCV-selected lambda: {res.best_lambda:g}")
    ted.write_fits(args.out, fits, points, meta=meta)
    print(f"9 duration fits -> {args.out}")
    if args.curve_out:
        curve = fda.smooth_lrp(points, lam=args.lam, metadata=meta)
        fda.write_curve(args.curve_out, curve)
        print(f"smoothed profile -> {args.curve_out}")
    return 0


def _add_fpca(sub):
    p = sub.add_parser("fpca", help="functional PCA over profile curves")
    p.add_argument("--curves", required=True,
                   help="glob of curve JSON files (one day's cross-section)")
    p.add_argument("-q", "--components", type=int, default=3)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_fpca)


def cmd_fpca(args) -> int:
    paths = sorted(glob(args.curves))
    if not paths:
        print(f"no curves match {args.curves!r}", file=sys.stderr)
        return 1
    curves = [fda.read_curve(p) for p in paths]
    res = run_fpca(curves, n_components=args.components)
    write_fpca(args.out, res)
    frac = ", ".join(f"{x:.3f}" for x in res.explained_fraction())
    print(f"{len(curves)} curves; explained fractions: {frac} -> {args.out}")
    return 0


def _add_commonality(sub):
    p = sub.add_parser("commonality",
                       help="factor extraction and per-asset R2 for one day")
    p.add_argument("--series", required=True,
                   help="glob of aligned series CSVs (one per asset)")
    p.add_argument("--method", choices=[PCA, ICA], default=PCA)
    p.add_argument("--diff", action="store_true",
                   help="use first differences instead of levels")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True, help="R2 CSV path")
    p.set_defaults(func=cmd_commonality)


def cmd_commonality(args) -> int:
    paths = sorted(glob(args.series))
    if not paths:
        print(f"no series match {args.series!r}", file=sys.stderr)
        return 1
    series = {Path(p).stem: read_series(p, asset=Path(p).stem) for p in paths}
    panel = CrossSection.from_series(series, diff=args.diff)
    kwargs = {"seed": args.seed} if args.method == ICA else {}
    reg = run_commonality(panel, method=args.method, **kwargs)
    import csv as _csv
    with open(args.out, "w", newline="") as fh:
        w = _csv.writer(fh)
        w.writerow(["symbol", "method", "r2"])
        for sym, r2 in sorted(reg.r2_by_asset().items()):
            w.writerow([sym, args.method, repr(float(r2))])
    print(f"median R2 ({args.method}, {panel.n_assets} assets, "
          f"{panel.n_slices} slices): {reg.median_r2():.3f} -> {args.out}")
    return 0


def _add_run(sub):
    p = sub.add_parser("run", help="full pipeline from a TOML config")
    p.add_argument("--config", required=True)
    p.add_argument("--plots", action="store_true",
                   help="also emit SVG charts (needs matplotlib)")
    p.add_argument("--workers", type=int, default=0,
                   help=f"worker processes (default ${pipeline.WORKERS_ENV} or 1)")
    p.set_defaults(func=cmd_run)


def cmd_run(args) -> int:
    cfg = pipeline.config_from_toml(args.config)
    if args.plots:
        cfg.plots = True
    if args.workers:
        cfg.workers = args.workers
    bundle = pipeline.run_pipeline(cfg)
    n_fail = len(bundle["failures"])
    print(f"pipeline finished: stages {sorted(bundle['stages'])} "
          f"({n_fail} recorded failure{'s' if n_fail != 1 else ''}) "
          f"-> {bundle['outdir']}")
    for f in bundle["failures"]:
        print(f"  failed: {f['stage']} {f['symbol']} day{f['day']}: "
              f"{f['error']}", file=sys.stderr)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="liqres",
        description="Limit-order-book liquidity resilience toolkit")
    sub = parser.add_subparsers(dest="command", required=True)
    _add_synth(sub)
    _add_reconstruct(sub)
    _add_measure(sub)
    _add_ted(sub)
    _add_lrp(sub)
    _add_fpca(sub)
    _add_commonality(sub)
    _add_run(sub)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    with warnings.catch_warnings():
        warnings.simplefilter("default")
        return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
