"""Shared fixtures and generators for the test suite."""

from __future__ import annotations

import numpy as np
import pytest

from liqres.lob import ASK, BID, BookLevel, BookState, OrderEvent


def make_state(bids, asks) -> BookState:
    """BookState from [(price, volume, orders?), ...] per side."""

    def levels(pairs, reverse):
        out = []
        for p in pairs:
            price, vol = p[0], p[1]
            cnt = p[2] if len(p) > 2 else 1
            out.append(BookLevel(int(price), int(vol), int(cnt)))
        out.sort(key=lambda lv: lv.price, reverse=reverse)
        return tuple(out)

    return BookState(bids=levels(bids, True), asks=levels(asks, False))


def random_stream(rng: np.random.Generator, n_events: int,
                  mid: int = 1000, asset: str = "T") -> list[OrderEvent]:
    """A valid never-crossing event stream with mixed kinds.

    Submissions stay strictly on their own side of the touch so the stream
    replays cleanly under the reject policy. Executions and cancellations
    only ever touch resting volume. Timestamps are non-decreasing and may
    repeat.
    """
    events: list[OrderEvent] = []
    live: dict[int, tuple[str, int, int]] = {}
    best = {BID: None, ASK: None}
    next_id = 0
    ts = 0

    def submit() -> OrderEvent:
        nonlocal next_id
        side = BID if rng.random() < 0.5 else ASK
        if side == BID:
            hi = (best[ASK] - 1) if best[ASK] is not None else mid + 5
            price = int(hi - rng.integers(0, 10))
        else:
            lo = (best[BID] + 1) if best[BID] is not None else mid - 5
            price = int(lo + rng.integers(0, 10))
        price = max(price, 1)
        if side == ASK and best[BID] is not None:
            price = max(price, best[BID] + 1)
        vol = int(rng.integers(1, 200))
        oid = next_id
        next_id += 1
        live[oid] = (side, price, vol)
        if best[side] is None or (side == BID and price > best[side]) \
                or (side == ASK and price < best[side]):
            best[side] = price
        return OrderEvent(ts, asset, "submit", side, oid, price, vol)

    def reduce(kind: str) -> OrderEvent:
        oid = int(rng.choice(list(live)))
        side, price, vol = live[oid]
        take = int(rng.integers(1, vol + 1))
        if take == vol:
            del live[oid]
            if price == best[side]:
                same = [p for s, p, _ in live.values() if s == side]
                best[side] = (max(same) if side == BID else min(same)) if same else None
        else:
            live[oid] = (side, price, vol - take)
        return OrderEvent(ts, asset, kind, side, oid, price, take)

    for _ in range(n_events):
        ts += int(rng.integers(0, 4))
        r = rng.random()
        if not live or r < 0.55:
            events.append(submit())
        elif r < 0.85:
            events.append(reduce("execute"))
        else:
            events.append(reduce("cancel"))
    return events


@pytest.fixture
def rng():
    return np.random.default_rng(20240817)
