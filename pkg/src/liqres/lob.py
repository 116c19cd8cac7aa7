"""Order-event parsing and limit order book reconstruction.

Event files are replayed into a mutable :class:`OrderBook`, one book per
asset. Immutable :class:`BookState` snapshots are taken at sampling
boundaries and handed to the measure functions downstream.
"""

from __future__ import annotations

import csv
import json
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import CrossedBookRejected, InvalidEvent, UnknownOrderId

SUBMIT = "submit"
EXECUTE = "execute"
CANCEL = "cancel"
BID = "bid"
ASK = "ask"

_KINDS = (SUBMIT, EXECUTE, CANCEL)
_SIDES = (BID, ASK)


@dataclass(slots=True)
class OrderEvent:
    """One limit order submission, execution or cancellation.

    Prices are integer ticks, volumes integer shares and timestamps
    integer milliseconds since midnight.
    """

    timestamp: int
    asset: str
    kind: str
    side: str
    order_id: int | str
    price: int
    volume: int

    def validate(self) -> None:
        if self.kind not in _KINDS:
            raise InvalidEvent(f"unknown event kind {self.kind!r}")
        if self.side not in _SIDES:
            raise InvalidEvent(f"unknown side {self.side!r}")
        if self.volume <= 0:
            raise InvalidEvent(f"non-positive volume {self.volume} for {self.kind}")
        if self.kind == SUBMIT and self.price <= 0:
            raise InvalidEvent(f"non-positive price {self.price}")


@dataclass(frozen=True, slots=True)
class BookLevel:
    price: int
    volume: int
    orders: int


@dataclass(frozen=True, slots=True)
class BookState:
    """Level-aggregated snapshot of one side pair of the book.

    ``bids`` are ordered by price descending, ``asks`` ascending, so index 0
    is the touch on either side.
    """

    bids: tuple[BookLevel, ...]
    asks: tuple[BookLevel, ...]

    @property
    def best_bid(self) -> BookLevel | None:
        return self.bids[0] if self.bids else None

    @property
    def best_ask(self) -> BookLevel | None:
        return self.asks[0] if self.asks else None

    @property
    def two_sided(self) -> bool:
        return bool(self.bids) and bool(self.asks)

    def midprice(self) -> float:
        """Midpoint of the touch, ``(best ask + best bid) / 2``."""
        if not self.two_sided:
            raise ValueError("midprice undefined on a one-sided book")
        return (self.asks[0].price + self.bids[0].price) / 2.0

    def check_invariants(self) -> None:
        """Raise AssertionError if level ordering or positivity is violated."""
        bid_prices = [lv.price for lv in self.bids]
        ask_prices = [lv.price for lv in self.asks]
        assert all(a < b for a, b in zip(bid_prices[1:], bid_prices)), "bid prices not decreasing"
        assert all(a < b for a, b in zip(ask_prices, ask_prices[1:])), "ask prices not increasing"
        assert all(lv.volume > 0 and lv.orders > 0 for lv in self.bids + self.asks)
        if self.two_sided:
            assert self.asks[0].price > self.bids[0].price, "crossed book"


class OrderBook:
    """Mutable per-asset book; apply events sequentially, snapshot on demand.

    ``crossed_policy`` controls submissions that would cross the touch:
    ``"reject"`` raises (exchange output is already uncrossed), ``"match"``
    fills against resting volume in price priority and rests any remainder.
    """

    __slots__ = ("crossed_policy", "_orders", "_bids", "_asks", "_best_bid",
                 "_best_ask", "_last_ts", "_last_exec_touch_side", "n_events")

    def __init__(self, crossed_policy: str = "reject"):
        if crossed_policy not in ("reject", "match"):
            raise ValueError(f"unknown crossed_policy {crossed_policy!r}")
        self.crossed_policy = crossed_policy
        # order_id -> [side, price, volume]
        self._orders: dict = {}
        # price -> [total_volume, order_count, fifo of order ids]
        self._bids: dict = {}
        self._asks: dict = {}
        self._best_bid: int | None = None
        self._best_ask: int | None = None
        self._last_ts: int = -1
        self._last_exec_touch_side: str | None = None
        self.n_events = 0

    # -- queries -------------------------------------------------------

    @property
    def best_bid(self) -> int | None:
        return self._best_bid

    @property
    def best_ask(self) -> int | None:
        return self._best_ask

    def resting_volume(self, order_id) -> int:
        """Volume still resting for ``order_id`` (0 if fully gone)."""
        entry = self._orders.get(order_id)
        return entry[2] if entry is not None else 0

    def resting_orders(self) -> dict:
        """order_id -> (side, price, volume) for all resting orders."""
        return {oid: tuple(v) for oid, v in self._orders.items()}

    @property
    def last_execute_touch_side(self) -> str | None:
        """Side of the last applied event if it executed at the touch, else None."""
        return self._last_exec_touch_side

    def book_state(self) -> BookState:
        bids = tuple(BookLevel(p, lv[0], lv[1])
                     for p, lv in sorted(self._bids.items(), reverse=True))
        asks = tuple(BookLevel(p, lv[0], lv[1])
                     for p, lv in sorted(self._asks.items()))
        return BookState(bids=bids, asks=asks)

    # -- mutation ------------------------------------------------------

    def apply(self, e: OrderEvent) -> None:
        ts = e.timestamp
        if ts < self._last_ts:
            raise InvalidEvent(f"timestamp {ts} decreases (last {self._last_ts})")
        self._last_ts = ts
        kind = e.kind
        self._last_exec_touch_side = None
        if kind == SUBMIT:
            self._submit(e)
        elif kind == EXECUTE or kind == CANCEL:
            self._reduce(e, record_touch=kind == EXECUTE)
        else:
            raise InvalidEvent(f"unknown event kind {kind!r}")
        self.n_events += 1

    def _submit(self, e: OrderEvent) -> None:
        if e.volume <= 0:
            raise InvalidEvent(f"non-positive volume {e.volume} for submit")
        oid, side, price, volume = e.order_id, e.side, e.price, e.volume
        if oid in self._orders:
            raise InvalidEvent(f"duplicate order id {oid!r}")
        crosses = (self._best_ask is not None and price >= self._best_ask
                   ) if side == BID else (
                   self._best_bid is not None and price <= self._best_bid)
        if crosses:
            if self.crossed_policy == "reject":
                raise CrossedBookRejected(
                    f"{side} submit at {price} crosses the touch")
            volume = self._match(side, price, volume)
            if volume == 0:
                return
        levels = self._bids if side == BID else self._asks
        self._orders[oid] = [side, price, volume]
        lv = levels.get(price)
        if lv is None:
            levels[price] = [volume, 1, deque((oid,))]
            if side == BID:
                if self._best_bid is None or price > self._best_bid:
                    self._best_bid = price
            else:
                if self._best_ask is None or price < self._best_ask:
                    self._best_ask = price
        else:
            lv[0] += volume
            lv[1] += 1
            lv[2].append(oid)

    def _match(self, side: str, price: int, volume: int) -> int:
        """Fill an aggressive submit against the opposite side; return remainder."""
        opp = self._asks if side == BID else self._bids
        orders = self._orders
        while volume > 0:
            best = self._best_ask if side == BID else self._best_bid
            if best is None:
                break
            if (side == BID and price < best) or (side == ASK and price > best):
                break
            lv = opp[best]
            fifo = lv[2]
            while volume > 0 and fifo:
                oid = fifo[0]
                entry = orders.get(oid)
                if entry is None or entry[1] != best:
                    fifo.popleft()  # stale id from an earlier cancel/fill
                    continue
                fill = entry[2] if entry[2] <= volume else volume
                entry[2] -= fill
                lv[0] -= fill
                volume -= fill
                if entry[2] == 0:
                    del orders[oid]
                    lv[1] -= 1
                    fifo.popleft()
            if lv[0] == 0:
                del opp[best]
                self._recompute_best(BID if side == ASK else ASK)
        return volume

    def _reduce(self, e: OrderEvent, record_touch: bool) -> None:
        entry = self._orders.get(e.order_id)
        if entry is None:
            raise UnknownOrderId(f"{e.kind} on unknown order id {e.order_id!r}")
        if e.volume <= 0 or e.volume > entry[2]:
            raise InvalidEvent(
                f"{e.kind} volume {e.volume} invalid for resting {entry[2]}")
        side, price = entry[0], entry[1]
        levels = self._bids if side == BID else self._asks
        if record_touch:
            touch = self._best_bid if side == BID else self._best_ask
            if price == touch:
                self._last_exec_touch_side = side
        lv = levels[price]
        entry[2] -= e.volume
        lv[0] -= e.volume
        if entry[2] == 0:
            del self._orders[e.order_id]
            lv[1] -= 1
        if lv[0] == 0:
            del levels[price]
            self._recompute_best(side)

    def _recompute_best(self, side: str) -> None:
        if side == BID:
            self._best_bid = max(self._bids) if self._bids else None
        else:
            self._best_ask = min(self._asks) if self._asks else None


def apply_event(book: OrderBook, e: OrderEvent) -> OrderBook:
    """Apply one event to ``book`` and return it (sequential use only)."""
    book.apply(e)
    return book


def replay(events: Iterable[OrderEvent], crossed_policy: str = "reject") -> OrderBook:
    """Replay an entire event stream into a fresh book."""
    book = OrderBook(crossed_policy=crossed_policy)
    for e in events:
        book.apply(e)
    return book


# -- sampled liquidity series ----------------------------------------------


@dataclass(slots=True)
class LiquiditySeries:
    """Evenly sampled per-asset series of one liquidity measure.

    ``values`` holds NaN where the book was one-sided at a boundary.
    """

    times_ms: np.ndarray
    values: np.ndarray
    asset: str = ""
    measure: str = ""
    day: str = ""
    session_open_ms: int = 0

    def __len__(self) -> int:
        return len(self.values)

    def finite_values(self) -> np.ndarray:
        v = self.values
        return v[np.isfinite(v)]


#: per-boundary book features: ask/bid order counts and volumes over the
#: first five levels, plus buy/sell market-order trigger flags.
FEATURE_COLUMNS = ("ask_orders", "bid_orders", "ask_volume", "bid_volume",
                   "buy_trigger", "sell_trigger")

COVARIATE_LEVELS = 5  # levels exposed to covariates; deeper levels stay in the book


def _book_features(state: BookState, trigger_side: str | None) -> tuple:
    asks = state.asks[:COVARIATE_LEVELS]
    bids = state.bids[:COVARIATE_LEVELS]
    return (
        sum(lv.orders for lv in asks),
        sum(lv.orders for lv in bids),
        sum(lv.volume for lv in asks),
        sum(lv.volume for lv in bids),
        1.0 if trigger_side == ASK else 0.0,
        1.0 if trigger_side == BID else 0.0,
    )


def sample_series(
    events: Iterable[OrderEvent],
    measure,
    interval_ms: int,
    session: tuple[int, int],
    crossed_policy: str = "reject",
    return_features: bool = False,
    asset: str = "",
    day: str = "",
):
    """Replay ``events`` and sample a liquidity measure at interval boundaries.

    Boundaries sit at ``open + k * interval_ms`` for ``k = 1..floor(length /
    interval_ms)``; each sample evaluates the measure on the last book state
    at or before the boundary (events stamped exactly on a boundary are
    included). One-sided books yield NaN.

    ``measure`` is either a callable ``BookState -> float`` or a
    :class:`liqres.liquidity.MeasureSpec`.

    With ``return_features=True`` also returns an ``(n, 6)`` array of
    per-boundary book covariate features (see ``FEATURE_COLUMNS``); the
    trigger flags are set when the most recent applied event executed
    resting volume at the touch.
    """
    if interval_ms <= 0:
        raise ValueError("interval_ms must be positive")
    open_ms, close_ms = session
    if close_ms <= open_ms:
        raise ValueError("empty session window")
    if callable(measure):
        measure_fn = measure
        measure_name = getattr(measure, "__name__", "custom")
    else:
        from .liquidity import measure_fn as _mk
        measure_fn = _mk(measure)
        measure_name = measure.kind

    n = (close_ms - open_ms) // interval_ms
    times = open_ms + interval_ms * np.arange(1, n + 1, dtype=np.int64)
    values = np.empty(n)
    feats = np.zeros((n, len(FEATURE_COLUMNS))) if return_features else None

    book = OrderBook(crossed_policy=crossed_policy)
    b = 0

    def take(i: int) -> None:
        state = book.book_state()
        try:
            values[i] = measure_fn(state)
        except Exception:
            values[i] = np.nan
        if feats is not None:
            feats[i] = _book_features(state, book.last_execute_touch_side)

    for e in events:
        ts = e.timestamp
        while b < n and times[b] < ts:
            take(b)
            b += 1
        book.apply(e)
    while b < n:
        take(b)
        b += 1

    series = LiquiditySeries(times_ms=times, values=values, asset=asset,
                             measure=measure_name, day=day,
                             session_open_ms=open_ms)
    if return_features:
        return series, feats
    return series


# -- file formats ------------------------------------------------------------

EVENT_COLUMNS = ("timestamp_ms", "symbol", "kind", "side", "order_id",
                 "price_ticks", "volume")


def read_events(path: str | Path) -> list[OrderEvent]:
    """Read one asset-day event file (.csv with header, or NDJSON)."""
    path = Path(path)
    events: list[OrderEvent] = []
    if path.suffix.lower() in (".ndjson", ".jsonl", ".json"):
        with open(path) as fh:
            for line in fh:
                line = line.strip()
                if not line:
                    continue
                rec = json.loads(line)
                events.append(OrderEvent(
                    timestamp=int(rec["timestamp_ms"]), asset=rec["symbol"],
                    kind=rec["kind"].lower(), side=rec["side"].lower(),
                    order_id=rec["order_id"], price=int(rec["price_ticks"]),
                    volume=int(rec["volume"])))
    else:
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            if tuple(header) != EVENT_COLUMNS:
                raise InvalidEvent(
                    f"{path}: expected columns {EVENT_COLUMNS}, got {tuple(header)}")
            for row in reader:
                events.append(OrderEvent(
                    timestamp=int(row[0]), asset=row[1], kind=row[2],
                    side=row[3], order_id=row[4], price=int(row[5]),
                    volume=int(row[6])))
    return events


def write_events(path: str | Path, events: Sequence[OrderEvent]) -> None:
    """Write events as CSV with the canonical column layout."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(EVENT_COLUMNS)
        for e in events:
            writer.writerow((e.timestamp, e.asset, e.kind, e.side, e.order_id,
                             e.price, e.volume))


def write_series(path: str | Path, series: LiquiditySeries) -> None:
    """Write a sampled series as columnar CSV ``(time_s, value)``."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("time_s", "value"))
        for t, v in zip(series.times_ms, series.values):
            writer.writerow((f"{t / 1000.0:.3f}", "" if np.isnan(v) else repr(float(v))))


def read_series(path: str | Path, asset: str = "", measure: str = "",
                day: str = "") -> LiquiditySeries:
    times = []
    values = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            times.append(int(round(float(row[0]) * 1000)))
            values.append(float(row[1]) if row[1] else np.nan)
    return LiquiditySeries(times_ms=np.asarray(times, dtype=np.int64),
                           values=np.asarray(values, dtype=float),
                           asset=asset, measure=measure, day=day)


def write_features(path: str | Path, series: LiquiditySeries,
                   features: np.ndarray) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(("time_s",) + FEATURE_COLUMNS)
        for t, row in zip(series.times_ms, features):
            writer.writerow((f"{t / 1000.0:.3f}",) + tuple(repr(float(x)) for x in row))


def read_features(path: str | Path) -> np.ndarray:
    rows = []
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            rows.append([float(x) for x in row[1:]])
    return np.asarray(rows, dtype=float)
