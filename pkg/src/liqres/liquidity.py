"""Liquidity measures and the exceedance-time covariate vector.

Both measures quantify illiquidity: larger values mean a less liquid book.
The round-trip measure averages volume-weighted premiums (asks) and
discounts (bids) relative to the midprice over the depth needed to fill a
target quantity on each side.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .errors import DegenerateR, EmptySide
from .lob import ASK, BID, EXECUTE, BookState, COVARIATE_LEVELS, OrderEvent

SPREAD = "spread"
XLM = "xlm"

#: default round-trip fill target, in shares (or currency with currency_cap)
DEFAULT_R_CAP = 25_000.0


@dataclass(frozen=True, slots=True)
class MeasureSpec:
    """Selection and parameters of a liquidity measure.

    ``r_cap`` caps the round-trip quantity; the effective fill target also
    never exceeds the volume resting on either side. With
    ``currency_cap=True`` the cap is interpreted in currency and divided by
    the midprice before use. ``max_levels`` limits how deep the measure
    looks (default: full book).
    """

    kind: str = SPREAD
    r_cap: float = DEFAULT_R_CAP
    max_levels: int | None = None
    currency_cap: bool = False

    def __post_init__(self):
        if self.kind not in (SPREAD, XLM):
            raise ValueError(f"unknown measure kind {self.kind!r}")
        if self.r_cap <= 0:
            raise ValueError("r_cap must be positive")


def spread(book: BookState) -> float:
    """Inside spread in ticks: best ask minus best bid."""
    if not book.asks or not book.bids:
        raise EmptySide("spread needs both sides quoted")
    return float(book.asks[0].price - book.bids[0].price)


def _side_fill_cost(levels, R: float, mid: float, is_ask: bool) -> float:
    """Volume-weighted cost of filling R shares against one side.

    Walks levels in priority order; the deepest partially used level
    contributes only the remainder. When R lands exactly on a level
    boundary the next level price is never read.
    """
    acc = 0.0
    remaining = R
    for lv in levels:
        take = lv.volume if lv.volume <= remaining else remaining
        dist = (lv.price - mid) if is_ask else (mid - lv.price)
        acc += take * dist
        remaining -= take
        if remaining <= 0:
            break
    return acc / R


def xlm(book: BookState, spec: MeasureSpec | None = None) -> float:
    """Cost-of-round-trip measure in ticks per share.

    The fill target is ``R = min(cap, total ask volume, total bid volume)``;
    each side contributes its volume-weighted distance from the midprice
    over the levels needed to source R, divided by R.
    """
    if spec is None:
        spec = MeasureSpec(kind=XLM)
    if not book.asks or not book.bids:
        raise EmptySide("round-trip measure needs both sides quoted")
    asks = book.asks[:spec.max_levels] if spec.max_levels else book.asks
    bids = book.bids[:spec.max_levels] if spec.max_levels else book.bids
    mid = book.midprice()
    cap = spec.r_cap / mid if spec.currency_cap else spec.r_cap
    R = min(cap, sum(lv.volume for lv in asks), sum(lv.volume for lv in bids))
    if R <= 0:
        raise DegenerateR("round-trip volume R is zero")
    return _side_fill_cost(asks, R, mid, True) + _side_fill_cost(bids, R, mid, False)


def measure_fn(spec: MeasureSpec) -> Callable[[BookState], float]:
    """Bind a spec to a plain ``BookState -> float`` callable."""
    if spec.kind == SPREAD:
        return spread
    return lambda book: xlm(book, spec)


# -- exceedance covariates ---------------------------------------------------


@dataclass(frozen=True, slots=True)
class CovariateVector:
    """Book and history covariates captured at an exceedance instant.

    ``mean_recent_duration`` is NaN until at least one completed episode
    exists; the fit imputes it with the running mean of the observed
    column.
    """

    ask_orders: float      # order count, first 5 ask levels
    bid_orders: float      # order count, first 5 bid levels
    ask_volume: float      # total volume, first 5 ask levels
    bid_volume: float      # total volume, first 5 bid levels
    measure_value: float   # liquidity measure at the exceedance instant
    recent_ted_count: float    # completed episodes ending in the trailing window
    time_since_last_ms: float  # since end of last episode, or session open
    mean_recent_duration_ms: float  # mean of last 5 durations (NaN if none)
    buy_trigger: float     # 1 if triggered by a market order to buy
    sell_trigger: float    # 1 if triggered by a market order to sell

    def as_array(self) -> np.ndarray:
        return np.array([
            self.ask_orders, self.bid_orders, self.ask_volume,
            self.bid_volume, self.measure_value, self.recent_ted_count,
            self.time_since_last_ms, self.mean_recent_duration_ms,
            self.buy_trigger, self.sell_trigger,
        ])


COVARIATE_NAMES = (
    "ask_orders", "bid_orders", "ask_volume", "bid_volume", "measure_value",
    "recent_ted_count", "time_since_last_ms", "mean_recent_duration_ms",
    "buy_trigger", "sell_trigger",
)

#: trailing window for counting recently completed episodes
RECENT_WINDOW_MS = 1000


class TedHistory:
    """Completed exceedance episodes of one series/threshold, time-ordered."""

    __slots__ = ("_starts", "_durations")

    def __init__(self):
        self._starts: list[int] = []
        self._durations: list[int] = []

    def __len__(self) -> int:
        return len(self._starts)

    def add(self, start_ms: int, duration_ms: int) -> None:
        self._starts.append(start_ms)
        self._durations.append(duration_ms)

    def count_ending_in(self, t0_ms: float, t1_ms: float) -> int:
        """Episodes whose end time falls in ``[t0, t1]``."""
        return sum(1 for s, d in zip(self._starts, self._durations)
                   if t0_ms <= s + d <= t1_ms)

    def last_end(self) -> int | None:
        if not self._starts:
            return None
        return self._starts[-1] + self._durations[-1]

    def recent_durations(self, k: int = 5) -> list[int]:
        return self._durations[-k:]


def history_covariates(history: TedHistory, t_ms: int,
                       session_open_ms: int) -> tuple[float, float, float]:
    """The three history-dependent covariates at exceedance time ``t_ms``."""
    count = float(history.count_ending_in(t_ms - RECENT_WINDOW_MS, t_ms))
    last_end = history.last_end()
    since = float(t_ms - (last_end if last_end is not None else session_open_ms))
    recent = history.recent_durations()
    mean_dur = float(np.mean(recent)) if recent else math.nan
    return count, since, mean_dur


def covariates(book: BookState, history: TedHistory, t_ms: int,
               measure_value: float, trigger: OrderEvent | None = None,
               trigger_at_touch: bool = False,
               session_open_ms: int = 0) -> CovariateVector:
    """Assemble the ten-covariate vector from a book snapshot and history.

    ``trigger`` is the event that moved the measure over the threshold, if
    known; an execution of resting ask volume at the touch flags a buy
    market order, of resting bid volume a sell.
    """
    asks = book.asks[:COVARIATE_LEVELS]
    bids = book.bids[:COVARIATE_LEVELS]
    count, since, mean_dur = history_covariates(history, t_ms, session_open_ms)
    is_exec = trigger is not None and trigger.kind == EXECUTE and trigger_at_touch
    return CovariateVector(
        ask_orders=float(sum(lv.orders for lv in asks)),
        bid_orders=float(sum(lv.orders for lv in bids)),
        ask_volume=float(sum(lv.volume for lv in asks)),
        bid_volume=float(sum(lv.volume for lv in bids)),
        measure_value=float(measure_value),
        recent_ted_count=count,
        time_since_last_ms=since,
        mean_recent_duration_ms=mean_dur,
        buy_trigger=1.0 if is_exec and trigger.side == ASK else 0.0,
        sell_trigger=1.0 if is_exec and trigger.side == BID else 0.0,
    )


def covariates_from_features(feature_row: Sequence[float], history: TedHistory,
                             t_ms: int, measure_value: float,
                             session_open_ms: int = 0) -> CovariateVector:
    """Same vector, built from a sampled feature row (see ``FEATURE_COLUMNS``)."""
    count, since, mean_dur = history_covariates(history, t_ms, session_open_ms)
    return CovariateVector(
        ask_orders=float(feature_row[0]),
        bid_orders=float(feature_row[1]),
        ask_volume=float(feature_row[2]),
        bid_volume=float(feature_row[3]),
        measure_value=float(measure_value),
        recent_ted_count=count,
        time_since_last_ms=since,
        mean_recent_duration_ms=mean_dur,
        buy_trigger=float(feature_row[4]),
        sell_trigger=float(feature_row[5]),
    )
