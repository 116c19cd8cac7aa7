"""Synthetic multi-asset order-flow panels with controllable liquidity.

Each asset-day has a latent log-spread path: an Ornstein-Uhlenbeck core
(mean-reverting at rate ln2 / half_life) plus a jump component that decays
at the same half-life. Jumps arrive as idiosyncratic and market-wide
Poisson events with lognormal magnitudes, and a common OU factor ties
assets together through per-asset loadings. The quantized spread path is
then rendered as an order-event stream (ladder cancels/re-submits around a
constant mid, plus occasional aggressive executions at the touch), which
replays into a live book with the target spread.

Randomness is keyed by (seed, day, asset) so any asset-day regenerates
byte-identically in isolation.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .lob import (ASK, BID, CANCEL, EXECUTE, SUBMIT, LiquiditySeries,
                  OrderEvent, write_events)

MARKET_STREAM = 999983          # rng stream id for the common factor
META_STREAM = 777               # rng stream id for symbol metadata
DEFAULT_OPEN_MS = 8 * 3600 * 1000

COUNTRIES = ("UK", "DE", "FR", "NL", "CH", "SE", "IT", "ES")
SECTORS = ("Banks", "Energy", "Telecom", "Retail", "Utilities",
           "Tech", "Mining", "Insurance")


def _per_asset(value, n: int, name: str) -> np.ndarray:
    arr = np.broadcast_to(np.asarray(value, dtype=float), (n,)).copy()
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} must be finite")
    return arr


@dataclass(frozen=True)
class SynthSpec:
    """Panel parameters. Scalars broadcast across assets."""

    n_assets: int = 10
    days: int = 1
    session_s: int = 1800
    dt_ms: int = 250
    seed: int = 0
    open_ms: int = DEFAULT_OPEN_MS

    base_spread_ticks: float = 4.0
    ou_sigma: float = 0.25                  # stationary sd of log-spread noise
    half_life_ms: object = 4000.0           # resilience time scale, per asset
    half_life_daily_jitter: float = 0.0     # lognormal sd of per-day multiplier
    loadings: object = 0.6                  # common-factor weight in [0, 1]
    tail_sigma: object = 0.5                # lognormal sigma of idio spike size
    common_tail_sigma: float = 0.4
    jump_scale: object = 0.7                # mean spike height in log-spread
    idio_jumps_per_min: object = 1.0
    common_jumps_per_min: float = 0.5
    trigger_prob: float = 0.7               # chance a spike starts with a trade

    mid_price_ticks: int = 10_000
    depth_levels: int = 5
    level_volume: int = 2000
    volume_jitter: float = 0.3
    max_spread_ticks: int = 1000

    def __post_init__(self):
        if self.n_assets < 1 or self.days < 1:
            raise ValueError("need at least one asset and one day")
        if self.session_s <= 0 or self.dt_ms <= 0:
            raise ValueError("session and step must be positive")
        if self.session_s * 1000 % self.dt_ms:
            raise ValueError("dt_ms must divide the session length")
        load = _per_asset(self.loadings, self.n_assets, "loadings")
        if np.any(load < 0) or np.any(load > 1):
            raise ValueError("loadings must lie in [0, 1]")
        hl = _per_asset(self.half_life_ms, self.n_assets, "half_life_ms")
        if np.any(hl <= 0):
            raise ValueError("half_life_ms must be positive")
        _per_asset(self.tail_sigma, self.n_assets, "tail_sigma")
        _per_asset(self.jump_scale, self.n_assets, "jump_scale")
        _per_asset(self.idio_jumps_per_min, self.n_assets, "idio_jumps_per_min")

    @property
    def n_steps(self) -> int:
        return self.session_s * 1000 // self.dt_ms

    @property
    def symbols(self) -> tuple[str, ...]:
        return tuple(f"SYN{i:02d}" for i in range(self.n_assets))

    def session(self) -> tuple[int, int]:
        return self.open_ms, self.open_ms + self.session_s * 1000


def _asset_rng(spec: SynthSpec, day: int, asset_idx: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, day, asset_idx])


def _market_rng(spec: SynthSpec, day: int) -> np.random.Generator:
    return np.random.default_rng([spec.seed, day, MARKET_STREAM])


def _ou_path(rng: np.random.Generator, n: int, theta_per_ms: float,
             sigma: float, dt_ms: float) -> np.ndarray:
    """Stationary OU samples via exact discretization."""
    a = math.exp(-theta_per_ms * dt_ms)
    noise_sd = sigma * math.sqrt(max(0.0, 1.0 - a * a))
    x = np.empty(n)
    x[0] = sigma * rng.standard_normal()
    eps = rng.standard_normal(n - 1) if n > 1 else np.empty(0)
    for k in range(1, n):
        x[k] = a * x[k - 1] + noise_sd * eps[k - 1]
    return x


def _jump_path(decay: float, impulses: np.ndarray) -> np.ndarray:
    """Exponentially decaying accumulation of jump impulses."""
    out = np.empty_like(impulses)
    level = 0.0
    for k in range(len(impulses)):
        level = level * decay + impulses[k]
        out[k] = level
    return out


@dataclass
class _MarketPath:
    factor: np.ndarray          # standardized common OU factor
    jump_sizes: np.ndarray      # common spike magnitude per step (0 = none)


def _market_path(spec: SynthSpec, day: int) -> _MarketPath:
    rng = _market_rng(spec, day)
    hl = np.exp(np.mean(np.log(_per_asset(spec.half_life_ms, spec.n_assets, "half_life_ms"))))
    if spec.half_life_daily_jitter > 0:
        hl *= math.exp(spec.half_life_daily_jitter * rng.standard_normal())
    else:
        rng.standard_normal()
    theta = math.log(2.0) / hl
    factor = _ou_path(rng, spec.n_steps, theta, 1.0, spec.dt_ms)
    p_arrival = spec.common_jumps_per_min * spec.dt_ms / 60_000.0
    arrivals = rng.random(spec.n_steps) < p_arrival
    base = float(np.mean(_per_asset(spec.jump_scale, spec.n_assets, "jump_scale")))
    mags = base * np.exp(
        spec.common_tail_sigma * rng.standard_normal(spec.n_steps)
        - 0.5 * spec.common_tail_sigma ** 2)
    return _MarketPath(factor=factor, jump_sizes=np.where(arrivals, mags, 0.0))


@dataclass
class _AssetDraws:
    log_spread: np.ndarray
    jump_steps: np.ndarray            # bool: any spike (idio or common) lands here
    trigger_u: np.ndarray
    trigger_dir: np.ndarray
    trigger_frac: np.ndarray
    vol_factors: np.ndarray           # (n_steps, depth_levels)
    level1_orders: np.ndarray         # ints in 1..3
    split_factors: np.ndarray         # (n_steps, 2)


def _asset_path(spec: SynthSpec, day: int, asset_idx: int,
                market: _MarketPath) -> _AssetDraws:
    rng = _asset_rng(spec, day, asset_idx)
    n = spec.n_steps
    hl = float(_per_asset(spec.half_life_ms, spec.n_assets, "half_life_ms")[asset_idx])
    if spec.half_life_daily_jitter > 0:
        hl *= math.exp(spec.half_life_daily_jitter * rng.standard_normal())
    else:
        rng.standard_normal()
    theta = math.log(2.0) / hl
    rho = float(_per_asset(spec.loadings, spec.n_assets, "loadings")[asset_idx])
    tail = float(_per_asset(spec.tail_sigma, spec.n_assets, "tail_sigma")[asset_idx])
    scale = float(_per_asset(spec.jump_scale, spec.n_assets, "jump_scale")[asset_idx])
    idio_rate = float(_per_asset(spec.idio_jumps_per_min, spec.n_assets,
                                 "idio_jumps_per_min")[asset_idx])

    z = _ou_path(rng, n, theta, 1.0, spec.dt_ms)
    p_arrival = idio_rate * spec.dt_ms / 60_000.0
    idio_arrivals = rng.random(n) < p_arrival
    idio_mags = scale * np.exp(tail * rng.standard_normal(n) - 0.5 * tail ** 2)
    # spikes mix like the diffusive part: common impulses enter with weight
    # rho, idiosyncratic ones with the complementary weight, so loadings=1
    # leaves no per-asset spike component at all
    idio_w = math.sqrt(1.0 - rho * rho)
    impulses = (idio_w * np.where(idio_arrivals, idio_mags, 0.0)
                + rho * market.jump_sizes)
    decay = 0.5 ** (spec.dt_ms / hl)
    jumps = _jump_path(decay, impulses)

    core = spec.ou_sigma * (rho * market.factor + math.sqrt(1.0 - rho * rho) * z)
    log_spread = math.log(spec.base_spread_ticks) + core + jumps

    return _AssetDraws(
        log_spread=log_spread,
        jump_steps=impulses > 0,
        trigger_u=rng.random(n),
        trigger_dir=rng.random(n),
        trigger_frac=rng.uniform(0.2, 0.8, n),
        vol_factors=rng.uniform(-1.0, 1.0, (n, spec.depth_levels)),
        level1_orders=rng.integers(1, 4, n),
        split_factors=rng.uniform(0.2, 0.8, (n, 2)),
    )


def latent_spread(spec: SynthSpec, day: int) -> tuple[np.ndarray, np.ndarray]:
    """Latent (unquantized) spread paths: times_ms and (n_assets, n_steps)."""
    market = _market_path(spec, day)
    times = spec.open_ms + spec.dt_ms * np.arange(spec.n_steps)
    rows = [np.exp(_asset_path(spec, day, i, market).log_spread)
            for i in range(spec.n_assets)]
    return times.astype(float), np.vstack(rows)


def latent_series(spec: SynthSpec, day: int, every_ms: int = 1000,
                  measure: str = "spread") -> dict[str, LiquiditySeries]:
    """Latent spreads subsampled onto a slice clock, as liquidity series.

    Convenient for factor/commonality experiments that do not need full
    book reconstruction.
    """
    if every_ms % spec.dt_ms:
        raise ValueError("every_ms must be a multiple of dt_ms")
    times, spreads = latent_spread(spec, day)
    stride = every_ms // spec.dt_ms
    # slice boundaries fall on rebuild steps; the book sampled at a boundary
    # reflects the rebuild stamped exactly there, except the final boundary
    # which has no rebuild of its own and shows the previous step
    n_slices = spec.n_steps // stride
    idx = np.minimum(np.arange(1, n_slices + 1) * stride, spec.n_steps - 1)
    bounds = spec.open_ms + every_ms * np.arange(1, n_slices + 1)
    open_ms, _ = spec.session()
    out = {}
    for i, sym in enumerate(spec.symbols):
        out[sym] = LiquiditySeries(times_ms=bounds,
                                   values=spreads[i, idx],
                                   asset=sym, measure=measure, day=day,
                                   session_open_ms=open_ms)
    return out


class _Ladder:
    """The generator's record of its own resting orders on one side."""

    __slots__ = ("side", "best", "orders")

    def __init__(self, side: str):
        self.side = side
        self.best = None
        self.orders: list[list] = []     # [order_id, price, volume]


def _level_volume(spec: SynthSpec, level: int, factor: float) -> int:
    base = spec.level_volume * (1.0 + 0.25 * level)
    return max(1, int(round(base * (1.0 + spec.volume_jitter * factor))))


def _emit_side(events, ladder: _Ladder, t: int, asset: str, best: int,
               spec: SynthSpec, draws: _AssetDraws, k: int,
               next_id: list[int]) -> None:
    """Cancel the side's resting orders and rebuild the ladder at ``best``."""
    for oid, price, vol in ladder.orders:
        events.append(OrderEvent(timestamp=t, asset=asset, kind=CANCEL,
                                 side=ladder.side, order_id=oid, price=price,
                                 volume=vol))
    ladder.orders = []
    ladder.best = best
    away = 1 if ladder.side == ASK else -1
    for lvl in range(spec.depth_levels):
        price = best + away * lvl
        vol = _level_volume(spec, lvl, draws.vol_factors[k, lvl])
        if lvl == 0:
            n1 = int(draws.level1_orders[k])
            cuts = sorted(draws.split_factors[k, :n1 - 1]) if n1 > 1 else []
            bounds = [0.0, *cuts, 1.0]
            parts = [max(1, int(round(vol * (b - a))))
                     for a, b in zip(bounds[:-1], bounds[1:])]
        else:
            parts = [vol]
        for part in parts:
            oid = next_id[0]
            next_id[0] += 1
            events.append(OrderEvent(timestamp=t, asset=asset, kind=SUBMIT,
                                     side=ladder.side, order_id=oid,
                                     price=price, volume=part))
            ladder.orders.append([oid, price, part])


def _emit_trigger(events, bids: _Ladder, asks: _Ladder, t: int, asset: str,
                  draws: _AssetDraws, k: int) -> None:
    """An aggressive execution against the first order at the touch."""
    ladder = asks if draws.trigger_dir[k] < 0.5 else bids
    best_orders = [o for o in ladder.orders if o[1] == ladder.best]
    if not best_orders:
        return
    order = best_orders[0]
    vol = min(max(1, int(draws.trigger_frac[k] * order[2])), order[2])
    events.append(OrderEvent(timestamp=t, asset=asset, kind=EXECUTE,
                             side=ladder.side, order_id=order[0],
                             price=order[1], volume=vol))
    order[2] -= vol
    if order[2] == 0:
        ladder.orders.remove(order)


def day_events(spec: SynthSpec, day: int, asset_idx: int,
               market: _MarketPath | None = None) -> list[OrderEvent]:
    """Event stream of one asset-day; replays into an uncrossed book."""
    if market is None:
        market = _market_path(spec, day)
    draws = _asset_path(spec, day, asset_idx, market)
    asset = spec.symbols[asset_idx]
    spreads = np.clip(np.rint(np.exp(draws.log_spread)), 1,
                      spec.max_spread_ticks).astype(int)
    mid = spec.mid_price_ticks
    events: list[OrderEvent] = []
    bids = _Ladder(BID)
    asks = _Ladder(ASK)
    next_id = [1]
    for k in range(spec.n_steps):
        t = spec.open_ms + k * spec.dt_ms
        s = int(spreads[k])
        bid_best = mid - s // 2
        ask_best = bid_best + s
        if k > 0 and draws.jump_steps[k] and draws.trigger_u[k] < spec.trigger_prob:
            _emit_trigger(events, bids, asks, t, asset, draws, k)
        # asks rebuild before bids: the new ask ladder cannot cross the old
        # bid best (ask_best > bid best on either clock), and the new bid
        # ladder then sits below the fresh ask best by construction
        rebuild_ask = asks.best != ask_best
        rebuild_bid = bids.best != bid_best
        if rebuild_ask:
            _emit_side(events, asks, t, asset, ask_best, spec, draws, k, next_id)
        if rebuild_bid:
            _emit_side(events, bids, t, asset, bid_best, spec, draws, k, next_id)
    return events


def generate_day(spec: SynthSpec, day: int) -> dict[str, list[OrderEvent]]:
    """Event streams for every asset on one day (shared market path)."""
    market = _market_path(spec, day)
    return {spec.symbols[i]: day_events(spec, day, i, market)
            for i in range(spec.n_assets)}


def asset_metadata(spec: SynthSpec) -> list[dict[str, str]]:
    """Stable symbol -> (country, sector) assignment for the panel."""
    rng = np.random.default_rng([spec.seed, META_STREAM])
    rows = []
    for sym in spec.symbols:
        rows.append({"symbol": sym,
                     "country": COUNTRIES[int(rng.integers(len(COUNTRIES)))],
                     "sector": SECTORS[int(rng.integers(len(SECTORS)))]})
    return rows


def write_metadata(path: str | Path, rows: list[dict[str, str]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, fieldnames=["symbol", "country", "sector"])
        w.writeheader()
        w.writerows(rows)


def read_metadata(path: str | Path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def generate_panel(spec: SynthSpec, outdir: str | Path) -> dict:
    """Write the full panel to disk; returns a manifest of what went where.

    Layout: ``events/{symbol}_day{d}.csv`` per asset-day plus ``assets.csv``
    with symbol metadata.
    """
    outdir = Path(outdir)
    events_dir = outdir / "events"
    events_dir.mkdir(parents=True, exist_ok=True)
    manifest = {"symbols": list(spec.symbols), "days": spec.days,
                "session": list(spec.session()), "files": {}}
    for day in range(spec.days):
        streams = generate_day(spec, day)
        for sym, events in streams.items():
            path = events_dir / f"{sym}_day{day}.csv"
            write_events(path, events)
            manifest["files"].setdefault(sym, {})[str(day)] = str(path)
    meta_path = outdir / "assets.csv"
    write_metadata(meta_path, asset_metadata(spec))
    manifest["metadata"] = str(meta_path)
    return manifest


def spike_injected(spec: SynthSpec, asset_idx: int, scale: float = 3.0,
                   rate_per_min: float = 6.0, tail: float = 1.2) -> SynthSpec:
    """Copy of ``spec`` with one asset made violently spiky and unloaded.

    Handy for experiments that need a known idiosyncratic-liquidity-risk
    asset in an otherwise well-behaved panel.
    """
    n = spec.n_assets
    tails = _per_asset(spec.tail_sigma, n, "tail_sigma")
    loads = _per_asset(spec.loadings, n, "loadings")
    scales = _per_asset(spec.jump_scale, n, "jump_scale")
    rates = _per_asset(spec.idio_jumps_per_min, n, "idio_jumps_per_min")
    tails[asset_idx] = max(tails[asset_idx], tail)
    loads[asset_idx] = 0.0
    scales[asset_idx] = scales[asset_idx] * scale
    rates[asset_idx] = rate_per_min
    return replace(spec, tail_sigma=tuple(tails), loadings=tuple(loads),
                   jump_scale=tuple(scales), idio_jumps_per_min=tuple(rates))
