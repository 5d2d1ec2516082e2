from __future__ import annotations

from datetime import date

import pytest

from infovalue.io import TickRecord
from infovalue.kyle import synthesize_dataset


@pytest.fixture(scope="session")
def small_dataset():
    """A few thousand synthetic events with sentence topics and tick streams."""
    return synthesize_dataset(n_events=2000, dims=24, signal_share=0.2, seed=7, n_topics=3,
                              tick_events=12, n_years=6)


def trade(ms: int, price: float, size: float = 100.0, day: date = date(2020, 3, 2)) -> TickRecord:
    return TickRecord("AAA", day, ms, price, size, None, None, "trade")


def quote(ms: int, bid: float, ask: float, day: date = date(2020, 3, 2)) -> TickRecord:
    return TickRecord("AAA", day, ms, 0.5 * (bid + ask), 100.0, bid, ask, "quote")
