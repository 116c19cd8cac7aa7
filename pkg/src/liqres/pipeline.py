"""Config-driven pipeline: events -> series -> profiles -> factor analyses.

Stages run in dependency order with a barrier between phases. Per
asset-day failures are recorded and skipped rather than aborting the run;
artifacts are deterministic functions of (inputs, config, seed) and are
re-used across runs when their input content hashes match.
"""

from __future__ import annotations

import csv
import hashlib
import json
import os
import re
import warnings
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:                      # python < 3.11
    import tomli as tomllib

from . import fda, synth, ted
from .commonality import ICA, PCA, CrossSection
from .commonality import commonality as run_commonality
from .fpca import (DEFAULT_BETA_LAMBDA, FunctionalCurve, concurrent_regress,
                   fpca, loo_r2, read_concurrent, write_concurrent,
                   write_fpca)
from .liquidity import DEFAULT_R_CAP, SPREAD, XLM, MeasureSpec
from .lob import read_events, read_features, read_series, sample_series
from .lob import write_features, write_series

METHODS = ("pca", "ica", "fpca-regression")
WORKERS_ENV = "LIQRES_WORKERS"


@dataclass
class PipelineConfig:
    """Everything a full run needs; defaults follow the reference choices
    (1 s sampling, 9 decile thresholds, smoothing lambda 0.02, 3 factors)."""

    input_glob: str = ""
    outdir: str = "out"
    measure: str = SPREAD
    r_cap: float = DEFAULT_R_CAP
    interval_ms: int = 1000
    crossed_policy: str = "reject"
    lambda_smooth: float = fda.DEFAULT_LAMBDA
    q_factors: int = 3
    methods: tuple[str, ...] = METHODS
    metadata_file: str = ""
    seed: int = 0
    lambda_beta: float = DEFAULT_BETA_LAMBDA
    diff: bool = False
    loo: bool = False
    plots: bool = False
    workers: int = 0
    synth_spec: synth.SynthSpec | None = None

    def __post_init__(self):
        if self.measure not in (SPREAD, XLM):
            raise ValueError(f"unknown measure {self.measure!r}")
        self.methods = tuple(self.methods)
        unknown = set(self.methods) - set(METHODS)
        if unknown:
            raise ValueError(f"unknown methods: {sorted(unknown)}")
        if self.interval_ms <= 0:
            raise ValueError("interval_ms must be positive")
        if self.workers <= 0:
            self.workers = int(os.environ.get(WORKERS_ENV, "1") or 1)

    def measure_spec(self) -> MeasureSpec:
        return MeasureSpec(kind=self.measure, r_cap=self.r_cap)


_SYNTH_KEYS = {f for f in synth.SynthSpec.__dataclass_fields__}


def config_from_toml(path: str | Path) -> PipelineConfig:
    """Load a run config from a TOML file.

    Pipeline keys live at top level or under ``[pipeline]``; an optional
    ``[synth]`` table describes a panel to generate when no input glob is
    given. Unknown keys are rejected so typos fail loudly.
    """
    with open(path, "rb") as fh:
        doc = tomllib.load(fh)
    synth_tab = doc.pop("synth", None)
    flat = dict(doc.pop("pipeline", {}))
    for key, val in doc.items():
        if isinstance(val, dict):
            raise ValueError(f"unexpected config table [{key}]")
        flat.setdefault(key, val)
    known = set(PipelineConfig.__dataclass_fields__) - {"synth_spec"}
    unknown = set(flat) - known
    if unknown:
        raise ValueError(f"unknown config keys: {sorted(unknown)}")
    spec = None
    if synth_tab is not None:
        bad = set(synth_tab) - _SYNTH_KEYS
        if bad:
            raise ValueError(f"unknown [synth] keys: {sorted(bad)}")
        spec = synth.SynthSpec(**synth_tab)
    if "methods" in flat:
        flat["methods"] = tuple(flat["methods"])
    return PipelineConfig(synth_spec=spec, **flat)


# -- input discovery -----------------------------------------------------------

_DAY_RE = re.compile(r"^(?P<sym>.+?)_day(?P<day>\d+)$")


@dataclass(frozen=True, order=True)
class AssetDay:
    symbol: str
    day: int
    path: str


def discover_inputs(pattern: str) -> list[AssetDay]:
    """Match event files; ``{symbol}_day{d}.csv`` names carry the day index,
    anything else is treated as day 0 of the stem."""
    from glob import glob
    found = []
    for p in sorted(glob(pattern)):
        stem = Path(p).stem
        m = _DAY_RE.match(stem)
        if m:
            found.append(AssetDay(m.group("sym"), int(m.group("day")), p))
        else:
            found.append(AssetDay(stem, 0, p))
    return found


# -- content-hash cache --------------------------------------------------------


def _hash_bytes(*parts: bytes) -> str:
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
        h.update(b"\x1f")
    return h.hexdigest()


def _hash_file(path: str | Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


class StageCache:
    """Maps artifact path -> input hash; artifacts are reused only when the
    recorded hash matches the current inputs and the file still exists."""

    def __init__(self, root: Path):
        self.path = root / "cache.json"
        self.entries: dict[str, str] = {}
        if self.path.exists():
            try:
                self.entries = json.loads(self.path.read_text())
            except (OSError, json.JSONDecodeError):
                self.entries = {}

    def fresh(self, artifact: Path, input_hash: str) -> bool:
        return (self.entries.get(str(artifact)) == input_hash
                and artifact.exists())

    def record(self, artifact: Path, input_hash: str) -> None:
        self.entries[str(artifact)] = input_hash

    def save(self) -> None:
        self.path.write_text(json.dumps(self.entries, indent=1,
                                        sort_keys=True) + "\n")


# -- per-stage work ------------------------------------------------------------


@dataclass
class Failure:
    stage: str
    symbol: str
    day: int
    error: str


def _peek_timestamps(path: str | Path) -> tuple[int, int]:
    """First and last event timestamp of a file without a full parse."""
    with open(path, "rb") as fh:
        first = fh.readline().strip()
        is_csv = first.startswith(b"timestamp_ms")
        line = fh.readline().strip() if is_csv else first
        if not line:
            raise ValueError("no events in file")
        lo = (int(line.split(b",")[0]) if is_csv
              else int(json.loads(line)["timestamp_ms"]))
        fh.seek(0, os.SEEK_END)
        size = fh.tell()
        fh.seek(max(0, size - (1 << 16)))
        tail = [ln for ln in fh.read().splitlines() if ln.strip()]
        last = tail[-1]
        hi = (int(last.split(b",")[0]) if is_csv
              else int(json.loads(last)["timestamp_ms"]))
    return lo, hi


def _measure_one(task: tuple) -> tuple[str, int, str, str]:
    """Worker: events file -> series + features CSVs. Returns paths."""
    path, symbol, day, cfg_bits, series_path, features_path = task
    events = read_events(path)
    if not events:
        raise ValueError("no events in file")
    open_ms, close_ms = cfg_bits["session"]
    if (close_ms - open_ms) // cfg_bits["interval_ms"] < 1:
        raise ValueError("session shorter than one sampling interval")
    spec = MeasureSpec(kind=cfg_bits["measure"], r_cap=cfg_bits["r_cap"])
    series, feats = sample_series(
        events, spec, cfg_bits["interval_ms"], (open_ms, close_ms),
        crossed_policy=cfg_bits["crossed_policy"], return_features=True,
        asset=symbol, day=str(day))
    write_series(series_path, series)
    write_features(features_path, series, feats)
    return symbol, day, series_path, features_path


def run_pipeline(cfg: PipelineConfig) -> dict:
    """Execute all configured stages; returns the report bundle manifest."""
    out = Path(cfg.outdir)
    out.mkdir(parents=True, exist_ok=True)
    cache = StageCache(out)
    failures: list[Failure] = []
    bundle: dict = {"outdir": str(out), "measure": cfg.measure,
                    "stages": {}, "failures": []}

    inputs = _stage_inputs(cfg, out, bundle)
    series_art = _stage_measure(cfg, out, cache, inputs, failures, bundle)
    lrp_art = _stage_lrp(cfg, out, cache, series_art, failures, bundle)

    curves: dict[tuple[str, int], fda.FunctionalCurve] = {}
    cdir = out / "curves"
    cdir.mkdir(exist_ok=True)
    for key, path in sorted(lrp_art.items()):
        points, _ = ted.read_lrp(path)
        curve = fda.smooth_lrp(points, lam=cfg.lambda_smooth,
                               metadata={"symbol": key[0], "day": key[1]})
        fda.write_curve(cdir / f"{key[0]}_day{key[1]}.json", curve)
        curves[key] = curve
    bundle["stages"]["curves"] = {f"{k[0]}/day{k[1]}":
                                  str(cdir / f"{k[0]}_day{k[1]}.json")
                                  for k in sorted(curves)}

    fpca_results = {}
    if "fpca-regression" in cfg.methods:
        fpca_results = _stage_fpca(cfg, out, curves, failures, bundle)
        _stage_concurrent(cfg, out, curves, fpca_results, failures, bundle)
    if "pca" in cfg.methods or "ica" in cfg.methods:
        _stage_commonality(cfg, out, series_art, failures, bundle)

    _write_summary(cfg, out, bundle, curves, failures)
    if cfg.plots:
        _emit_plots(cfg, out, curves, fpca_results, bundle)
    cache.save()

    bundle["failures"] = [asdict(f) for f in failures]
    (out / "report.json").write_text(
        json.dumps(bundle, indent=1, sort_keys=True) + "\n")
    return bundle


def _stage_inputs(cfg: PipelineConfig, out: Path, bundle: dict) -> list[AssetDay]:
    pattern = cfg.input_glob
    if not pattern:
        if cfg.synth_spec is None:
            raise ValueError("config needs an input glob or a [synth] table")
        manifest = synth.generate_panel(cfg.synth_spec, out / "panel")
        pattern = str(out / "panel" / "events" / "*.csv")
        if not cfg.metadata_file:
            cfg.metadata_file = manifest["metadata"]
        bundle["stages"]["synth"] = manifest
    inputs = discover_inputs(pattern)
    if not inputs:
        raise FileNotFoundError(f"no event files match {pattern!r}")
    bundle["stages"]["inputs"] = [asdict(i) for i in inputs]
    return inputs


def _stage_measure(cfg, out, cache, inputs, failures, bundle):
    sdir = out / "series"
    sdir.mkdir(exist_ok=True)

    # all assets of a day share one sampling clock: the union of their
    # event windows (early one-sided books sample as NaN and are handled
    # downstream as censoring gaps / dropped slices)
    sessions: dict[int, tuple[int, int]] = {}
    for item in inputs:
        try:
            lo, hi = _peek_timestamps(item.path)
        except (OSError, ValueError, KeyError) as exc:
            failures.append(Failure("measure", item.symbol, item.day,
                                    f"unreadable event file: {exc}"))
            continue
        cur = sessions.get(item.day)
        sessions[item.day] = ((lo, hi) if cur is None
                              else (min(cur[0], lo), max(cur[1], hi)))

    todo = []
    artifacts: dict[tuple[str, int], tuple[str, str]] = {}
    hashes = {}
    for item in inputs:
        if item.day not in sessions:
            continue
        cfg_bits = {"measure": cfg.measure, "r_cap": cfg.r_cap,
                    "interval_ms": cfg.interval_ms,
                    "crossed_policy": cfg.crossed_policy,
                    "session": sessions[item.day]}
        cfg_hash = _hash_bytes(json.dumps(cfg_bits, sort_keys=True).encode())
        series_path = sdir / f"{item.symbol}_day{item.day}_{cfg.measure}.csv"
        features_path = sdir / f"{item.symbol}_day{item.day}_features.csv"
        input_hash = _hash_bytes(_hash_file(item.path).encode(),
                                 cfg_hash.encode())
        hashes[(item.symbol, item.day)] = (series_path, features_path, input_hash)
        if cache.fresh(series_path, input_hash) and features_path.exists():
            artifacts[(item.symbol, item.day)] = (str(series_path),
                                                  str(features_path))
        else:
            todo.append((item.path, item.symbol, item.day, cfg_bits,
                         str(series_path), str(features_path)))

    def finish(res):
        sym, day, spath, fpath = res
        artifacts[(sym, day)] = (spath, fpath)
        _, _, input_hash = hashes[(sym, day)]
        cache.record(Path(spath), input_hash)

    if cfg.workers > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as pool:
            pending = {pool.submit(_measure_one, t): t for t in todo}
            for fut, t in pending.items():
                try:
                    finish(fut.result())
                except Exception as exc:            # noqa: BLE001
                    failures.append(Failure("measure", t[1], t[2], str(exc)))
    else:
        for t in todo:
            try:
                finish(_measure_one(t))
            except Exception as exc:                # noqa: BLE001
                failures.append(Failure("measure", t[1], t[2], str(exc)))
    bundle["stages"]["measure"] = {f"{k[0]}/day{k[1]}": v[0]
                                   for k, v in sorted(artifacts.items())}
    return artifacts


def _stage_lrp(cfg, out, cache, series_art, failures, bundle):
    ldir = out / "lrp"
    ldir.mkdir(exist_ok=True)
    artifacts: dict[tuple[str, int], str] = {}
    for (sym, day), (spath, fpath) in sorted(series_art.items()):
        out_path = ldir / f"{sym}_day{day}.json"
        input_hash = _hash_bytes(_hash_file(spath).encode(),
                                 _hash_file(fpath).encode(),
                                 repr(cfg.lambda_smooth).encode())
        if cache.fresh(out_path, input_hash):
            artifacts[(sym, day)] = str(out_path)
            continue
        try:
            series = read_series(spath, asset=sym, measure=cfg.measure,
                                 day=str(day))
            feats = read_features(fpath)
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                thresholds = ted.decile_thresholds(series)
                per_thr = ted.build_records(series, thresholds, feats)
                fits = [ted.fit_lognormal_aft(recs) for recs in per_thr]
                points = ted.lrp_points(fits)
            ted.write_records(ldir / f"{sym}_day{day}_records.csv", per_thr)
            ted.write_fits(out_path, fits, points,
                           meta={"symbol": sym, "day": day,
                                 "measure": cfg.measure,
                                 "lambda": cfg.lambda_smooth})
            cache.record(out_path, input_hash)
            artifacts[(sym, day)] = str(out_path)
        except Exception as exc:                    # noqa: BLE001
            failures.append(Failure("lrp", sym, day, str(exc)))
    bundle["stages"]["lrp"] = {f"{k[0]}/day{k[1]}": v
                               for k, v in sorted(artifacts.items())}
    return artifacts


def _stage_fpca(cfg, out, curves, failures, bundle):
    fdir = out / "fpca"
    fdir.mkdir(exist_ok=True)
    days = sorted({day for _, day in curves})
    results = {}
    for day in days:
        day_curves = [curves[k] for k in sorted(curves) if k[1] == day]
        try:
            res = fpca(day_curves, n_components=cfg.q_factors)
            path = fdir / f"day{day}.json"
            write_fpca(path, res)
            results[day] = res
        except Exception as exc:                    # noqa: BLE001
            failures.append(Failure("fpca", "*", day, str(exc)))
    bundle["stages"]["fpca"] = {f"day{d}": str(fdir / f"day{d}.json")
                                for d in results}
    return results


def _stage_concurrent(cfg, out, curves, fpca_results, failures, bundle):
    cdir = out / "concurrent"
    cdir.mkdir(exist_ok=True)
    symbols = sorted({sym for sym, _ in curves})
    days = sorted(fpca_results)
    stage = {}
    r2_rows = {}
    for sym in symbols:
        have = [d for d in days if (sym, d) in curves]
        if len(have) < cfg.q_factors + 1:
            failures.append(Failure(
                "fpca-regression", sym, -1,
                f"only {len(have)} usable days for {cfg.q_factors} factors"))
            continue
        responses = [curves[(sym, d)] for d in have]
        covs = [list(fpca_results[d].eigenfunctions) for d in have]
        try:
            fit = concurrent_regress(
                responses, covs, lambda_beta=cfg.lambda_beta,
                metadata={"symbol": sym, "days": have})
            if cfg.loo:
                fit.metadata["loo_r2"] = loo_r2(
                    responses, covs, lambda_beta=cfg.lambda_beta).tolist()
            path = cdir / f"{sym}.json"
            write_concurrent(path, fit)
            stage[sym] = str(path)
            r2_rows[sym] = fit.r2
        except Exception as exc:                    # noqa: BLE001
            failures.append(Failure("fpca-regression", sym, -1, str(exc)))
    if r2_rows:
        fit0 = read_concurrent(next(iter(stage.values())))
        with open(cdir / "r2_u.csv", "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["u"] + sorted(r2_rows))
            for i, u in enumerate(fit0.grid):
                w.writerow([repr(float(u))] +
                           [repr(float(r2_rows[s][i])) for s in sorted(r2_rows)])
        stage["r2_u"] = str(cdir / "r2_u.csv")
    bundle["stages"]["fpca-regression"] = stage


def _stage_commonality(cfg, out, series_art, failures, bundle):
    mdir = out / "commonality"
    mdir.mkdir(exist_ok=True)
    days = sorted({day for _, day in series_art})
    methods = [m for m in (PCA, ICA) if m in cfg.methods]
    stage = {}
    rows = []
    for day in days:
        series = {}
        for (sym, d), (spath, _) in series_art.items():
            if d == day:
                series[sym] = read_series(spath, asset=sym,
                                          measure=cfg.measure, day=str(day))
        try:
            panel = CrossSection.from_series(series, diff=cfg.diff)
        except Exception as exc:                    # noqa: BLE001
            failures.append(Failure("commonality", "*", day, str(exc)))
            continue
        for method in methods:
            try:
                with warnings.catch_warnings():
                    warnings.simplefilter("ignore")
                    reg = run_commonality(panel, method=method,
                                         **({"seed": cfg.seed + day}
                                            if method == ICA else {}))
                for sym, r2 in reg.r2_by_asset().items():
                    rows.append((day, sym, method, r2))
            except Exception as exc:                # noqa: BLE001
                failures.append(Failure(f"commonality-{method}", "*", day,
                                        str(exc)))
    path = mdir / "r2.csv"
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["day", "symbol", "method", "r2"])
        for day, sym, method, r2 in sorted(rows):
            w.writerow([day, sym, method, repr(float(r2))])
    stage["r2"] = str(path)
    bundle["stages"]["commonality"] = stage
    bundle["_commonality_rows"] = rows


def _load_metadata(cfg) -> dict[str, dict[str, str]]:
    if not cfg.metadata_file or not Path(cfg.metadata_file).exists():
        return {}
    return {row["symbol"]: row for row in synth.read_metadata(cfg.metadata_file)}


def _write_summary(cfg, out, bundle, curves, failures):
    meta = _load_metadata(cfg)
    rows = bundle.pop("_commonality_rows", [])
    scalar: dict[str, dict[str, list[float]]] = {}
    for day, sym, method, r2 in rows:
        scalar.setdefault(sym, {}).setdefault(method, []).append(r2)

    func_r2: dict[str, float] = {}
    cdir = out / "concurrent"
    stage = bundle["stages"].get("fpca-regression", {})
    for sym, path in stage.items():
        if sym == "r2_u":
            continue
        fit = read_concurrent(path)
        func_r2[sym] = fit.mean_r2()

    symbols = sorted({sym for sym, _ in curves}
                     | set(scalar) | set(func_r2))
    table = []
    for sym in symbols:
        entry = {
            "symbol": sym,
            "country": meta.get(sym, {}).get("country", ""),
            "sector": meta.get(sym, {}).get("sector", ""),
            "days": sum(1 for s, _ in curves if s == sym),
            "pca_r2": _mean_or_nan(scalar.get(sym, {}).get("pca")),
            "ica_r2": _mean_or_nan(scalar.get(sym, {}).get("ica")),
            "fregression_r2": func_r2.get(sym, float("nan")),
        }
        table.append(entry)

    groups = {"country": {}, "sector": {}}
    for kind in groups:
        values: dict[str, list] = {}
        for entry in table:
            if entry[kind]:
                values.setdefault(entry[kind], []).append(entry)
        for name, entries in sorted(values.items()):
            groups[kind][name] = {
                "n_assets": len(entries),
                "pca_r2": _mean_or_nan([e["pca_r2"] for e in entries]),
                "ica_r2": _mean_or_nan([e["ica_r2"] for e in entries]),
                "fregression_r2": _mean_or_nan(
                    [e["fregression_r2"] for e in entries]),
            }

    summary = {"assets": table, "groups": groups,
               "n_failures": len(failures)}
    (out / "summary.json").write_text(
        json.dumps(summary, indent=1, sort_keys=True) + "\n")
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.writer(fh)
        cols = ["symbol", "country", "sector", "days", "pca_r2", "ica_r2",
                "fregression_r2"]
        w.writerow(cols)
        for entry in table:
            w.writerow([entry[c] if not isinstance(entry[c], float)
                        else repr(entry[c]) for c in cols])
    bundle["stages"]["summary"] = {"json": str(out / "summary.json"),
                                   "csv": str(out / "summary.csv")}


def _mean_or_nan(values) -> float:
    values = [v for v in (values or []) if v == v]
    return float(np.mean(values)) if values else float("nan")


def _emit_plots(cfg, out, curves, fpca_results, bundle):
    """SVG line charts; requires matplotlib (extra: liqres[plots])."""
    try:
        import matplotlib
    except ModuleNotFoundError as exc:
        raise ModuleNotFoundError(
            "plot emission needs matplotlib; install liqres[plots]") from exc
    matplotlib.use("svg")
    import matplotlib.pyplot as plt

    pdir = out / "plots"
    pdir.mkdir(exist_ok=True)
    grid = np.linspace(1.0, 9.0, 161)
    made = {}

    for day, res in sorted(fpca_results.items()):
        fig, ax = plt.subplots(figsize=(7, 4))
        for k, f in enumerate(res.eigenfunctions, start=1):
            ax.plot(grid, f(grid), label=f"component {k}")
        ax.set_xlabel("decile index u")
        ax.set_ylabel("eigenfunction")
        ax.legend()
        fig.tight_layout()
        path = pdir / f"eigenfunctions_day{day}.svg"
        fig.savefig(path)
        plt.close(fig)
        made[f"eigenfunctions_day{day}"] = str(path)

    if curves:
        fig, ax = plt.subplots(figsize=(7, 4))
        for (sym, day), curve in sorted(curves.items()):
            ax.plot(grid, curve(grid), alpha=0.6, lw=0.9)
        ax.set_xlabel("decile index u")
        ax.set_ylabel("expected log duration")
        fig.tight_layout()
        path = pdir / "profiles.svg"
        fig.savefig(path)
        plt.close(fig)
        made["profiles"] = str(path)

    r2_path = out / "concurrent" / "r2_u.csv"
    if r2_path.exists():
        with open(r2_path, newline="") as fh:
            rdr = csv.reader(fh)
            header = next(rdr)
            data = np.array([[float(x) for x in row] for row in rdr])
        fig, ax = plt.subplots(figsize=(7, 4))
        for j, name in enumerate(header[1:], start=1):
            ax.plot(data[:, 0], data[:, j], label=name, alpha=0.7, lw=0.9)
        ax.set_xlabel("decile index u")
        ax.set_ylabel("R squared")
        ax.set_ylim(-0.02, 1.02)
        fig.tight_layout()
        path = pdir / "r2_u.svg"
        fig.savefig(path)
        plt.close(fig)
        made["r2_u"] = str(path)

    bundle["stages"]["plots"] = made
