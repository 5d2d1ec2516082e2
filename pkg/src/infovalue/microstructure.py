"""Trade signing, one-minute signed-flow bars, and Kyle's lambda.

Three classification rules are provided: Lee-Ready (quote midpoint, then tick
test), Ellis-Michaely-O'Hara (at-quote trades, then tick test) and
Chakrabarty-Li-Nguyen-Van Ness (outer 30% bands of the spread, then tick test).
Signed trades become a dense grid of 390 bars per session, and lambda is the
no-intercept slope of bar log returns on bar order flow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Sequence

import numpy as np

from .io import SESSION_CLOSE_MS, SESSION_OPEN_MS, DatasetBundle, TickRecord

__all__ = [
    "RULES",
    "FLOW_UNITS",
    "MINUTES_PER_SESSION",
    "DEFAULT_QUOTE_DELAY_MS",
    "SignedTrade",
    "MinuteBar",
    "LambdaEstimate",
    "sign_trades",
    "sign_trades_lr",
    "sign_trades_emo",
    "sign_trades_clnv",
    "build_minute_bars",
    "bar_arrays",
    "overnight_returns",
    "realized_variance",
    "estimate_lambda",
    "event_sessions",
    "event_bars",
    "lambda_for_event",
]

RULES = ("LR", "EMO", "CLNV")
FLOW_UNITS = ("shares", "dollars")
MINUTES_PER_SESSION = (SESSION_CLOSE_MS - SESSION_OPEN_MS) // 60_000  # 390
DEFAULT_QUOTE_DELAY_MS = 1000
MIN_BARS = 30

# prices within this relative distance count as equal (quote, midpoint, band edges)
_PRICE_RTOL = 1e-9
# CLNV: share of the spread at each edge classified by quote position
_CLNV_BAND = 0.3


@dataclass(frozen=True, slots=True)
class SignedTrade:
    date: date
    time_ms: int
    price: float
    size: float
    sign: int
    rule: str


@dataclass(frozen=True, slots=True)
class MinuteBar:
    session: int  # position of the session in the window, from 0
    minute_index: int  # 0..389 within the session
    log_return: float
    order_flow: float
    n_trades: int = 0

    @property
    def k(self) -> int:
        return self.session * MINUTES_PER_SESSION + self.minute_index


@dataclass(frozen=True)
class LambdaEstimate:
    lambda_: float
    stderr: float
    n_bars: int
    close_tminus2: float
    standardized_impact: float
    intercept: float = 0.0
    flow_units: str = "shares"


def _split(ticks: Iterable[TickRecord]) -> tuple[list[TickRecord], list[TickRecord]]:
    trades, quotes = [], []
    for t in ticks:
        (trades if t.kind == "trade" else quotes).append(t)
    return trades, quotes


def _close(a: float, b: float) -> bool:
    return abs(a - b) <= _PRICE_RTOL * max(abs(a), abs(b))


def _lr(price: float, bid: float, ask: float) -> int:
    mid = 0.5 * (bid + ask)
    if _close(price, mid):
        return 0
    return 1 if price > mid else -1


def _emo(price: float, bid: float, ask: float) -> int:
    if ask <= bid or _close(ask, bid):
        return 0  # locked or crossed quote: position carries no direction
    if _close(price, ask):
        return 1
    if _close(price, bid):
        return -1
    return 0


def _clnv(price: float, bid: float, ask: float) -> int:
    spread = ask - bid
    if spread <= 0 or _close(ask, bid):
        return 0
    inside = (price > bid or _close(price, bid)) and (price < ask or _close(price, ask))
    if not inside:
        return 0  # outside the quotes: tick test
    hi = ask - _CLNV_BAND * spread
    lo = bid + _CLNV_BAND * spread
    if price > hi or _close(price, hi):
        return 1
    if price < lo or _close(price, lo):
        return -1
    return 0


_QUOTE_RULES = {"LR": _lr, "EMO": _emo, "CLNV": _clnv}


def sign_trades(
    trades: Iterable[TickRecord],
    quotes: Iterable[TickRecord] | None = None,
    rule: str = "LR",
    quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS,
) -> list[SignedTrade]:
    """Classify trades as buyer (+1) or seller (-1) initiated under ``rule``.

    The prevailing quote for a trade is the latest quote on the same date stamped
    at or before ``trade.time_ms - quote_delay_ms``. When the quote rule gives no
    answer, the tick test takes the direction of the last nonzero price change
    among earlier trades; with no such change the sign is 0. If ``quotes`` is None
    the quote rows are taken from ``trades`` itself.
    """
    if rule not in _QUOTE_RULES:
        raise ValueError(f"unknown signing rule {rule!r}; expected one of {RULES}")
    if quote_delay_ms < 0:
        raise ValueError("quote_delay_ms must be nonnegative")
    if quotes is None:
        trades, quotes = _split(trades)
    trades = sorted((t for t in trades if t.kind == "trade"), key=lambda t: (t.date, t.time_ms))
    quotes = sorted((q for q in quotes if q.bid is not None and q.ask is not None),
                    key=lambda q: (q.date, q.time_ms))
    by_quote = _QUOTE_RULES[rule]

    out: list[SignedTrade] = []
    qi = 0
    bid = ask = qdate = None
    prev_price = None
    tick_sign = 0
    for t in trades:
        cutoff = (t.date, t.time_ms - quote_delay_ms)
        while qi < len(quotes) and (quotes[qi].date, quotes[qi].time_ms) <= cutoff:
            bid, ask, qdate = quotes[qi].bid, quotes[qi].ask, quotes[qi].date
            qi += 1
        if prev_price is not None and t.price != prev_price:
            tick_sign = 1 if t.price > prev_price else -1
        prev_price = t.price
        s = 0
        if bid is not None and qdate == t.date:
            s = by_quote(t.price, bid, ask)
        if s == 0:
            s = tick_sign
        out.append(SignedTrade(t.date, t.time_ms, t.price, t.size, s, rule))
    return out


def sign_trades_lr(trades, quotes=None, quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS) -> list[SignedTrade]:
    return sign_trades(trades, quotes, "LR", quote_delay_ms)


def sign_trades_emo(trades, quotes=None, quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS) -> list[SignedTrade]:
    return sign_trades(trades, quotes, "EMO", quote_delay_ms)


def sign_trades_clnv(trades, quotes=None, quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS) -> list[SignedTrade]:
    return sign_trades(trades, quotes, "CLNV", quote_delay_ms)


def _session_groups(signed: Sequence[SignedTrade], sessions: Sequence[date]):
    pos = {d: i for i, d in enumerate(sessions)}
    if len(pos) != len(sessions):
        raise ValueError("sessions contain duplicate dates")
    groups: list[list[SignedTrade]] = [[] for _ in sessions]
    for t in signed:
        i = pos.get(t.date)
        if i is None:
            raise ValueError(f"trade dated {t.date} is outside the window sessions")
        if not SESSION_OPEN_MS <= t.time_ms <= SESSION_CLOSE_MS:
            raise ValueError(f"trade at {t.time_ms} ms is outside regular trading hours")
        groups[i].append(t)
    for g in groups:
        g.sort(key=lambda t: t.time_ms)
    return groups


def _session_arrays(trades: list[SignedTrade], flow_units: str):
    K = MINUTES_PER_SESSION
    if not trades:
        return np.zeros(K), np.zeros(K), np.zeros(K, dtype=np.int64)
    t_ms = np.array([t.time_ms for t in trades], dtype=np.int64)
    minute = np.minimum((t_ms - SESSION_OPEN_MS) // 60_000, K - 1)
    price = np.array([t.price for t in trades], dtype=np.float64)
    signed = np.array([t.sign * t.size for t in trades], dtype=np.float64)
    if flow_units == "dollars":
        signed = signed * price
    flow = np.bincount(minute, weights=signed, minlength=K)
    count = np.bincount(minute, minlength=K)
    # last trade of each minute (trades are time sorted)
    rev_unique, rev_first = np.unique(minute[::-1], return_index=True)
    last = len(trades) - 1 - rev_first
    logp = np.full(K, np.nan)
    logp[rev_unique] = np.log(price[last])
    base = math.log(price[0])
    filled_idx = np.where(np.isnan(logp), -1, np.arange(K))
    np.maximum.accumulate(filled_idx, out=filled_idx)
    level = np.where(filled_idx >= 0, logp[np.clip(filled_idx, 0, None)], base)
    r = np.diff(np.concatenate([[base], level]))
    return r, flow, count


def bar_arrays(
    signed: Sequence[SignedTrade],
    sessions: Sequence[date],
    flow_units: str = "shares",
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """(log returns, order flow, trade counts) on the dense minute grid, in session order."""
    if flow_units not in FLOW_UNITS:
        raise ValueError(f"flow_units must be one of {FLOW_UNITS}")
    if not sessions:
        raise ValueError("at least one session is required")
    groups = _session_groups(signed, sessions)
    if not any(groups):
        raise ValueError("the window contains no trades")
    parts = [_session_arrays(g, flow_units) for g in groups]
    return tuple(np.concatenate([p[j] for p in parts]) for j in range(3))


def build_minute_bars(
    signed: Sequence[SignedTrade],
    sessions: Sequence[date],
    flow_units: str = "shares",
) -> list[MinuteBar]:
    """Dense one-minute bars, 390 per session.

    A bar's return is the log of its last trade price minus the log of the previous
    bar's last price; empty minutes carry the price forward and so have r = 0. A
    session's first bar is measured from that session's first trade, so overnight
    moves never enter. Flow is the sum of sign times size (times price in dollar
    units); unclassified trades add nothing.
    """
    r, y, c = bar_arrays(signed, sessions, flow_units)
    K = MINUTES_PER_SESSION
    return [MinuteBar(k // K, k % K, float(r[k]), float(y[k]), int(c[k])) for k in range(r.size)]


def overnight_returns(signed: Sequence[SignedTrade], sessions: Sequence[date]) -> np.ndarray:
    """Log change from each session's last trade to the next session's first trade."""
    groups = _session_groups(signed, sessions)
    out = []
    for a, b in zip(groups, groups[1:]):
        if a and b:
            out.append(math.log(b[0].price) - math.log(a[-1].price))
    return np.array(out, dtype=np.float64)


def realized_variance(bars: Sequence[MinuteBar] | np.ndarray, overnight: Sequence[float] = ()) -> float:
    """Sum of squared one-minute log returns, plus squared overnight returns if given."""
    if isinstance(bars, np.ndarray):
        r = bars.astype(np.float64)
    else:
        r = np.array([b.log_return if isinstance(b, MinuteBar) else b for b in bars], dtype=np.float64)
    o = np.asarray(overnight, dtype=np.float64)
    return float(r @ r + o @ o)


def estimate_lambda(
    bars: Sequence[MinuteBar] | tuple[np.ndarray, np.ndarray],
    close_tminus2: float,
    intercept: bool = False,
    flow_units: str = "shares",
) -> LambdaEstimate:
    """Least-squares slope of bar returns on bar order flow with an HC0 standard error.

    The default has no intercept: lambda = sum(r*y) / sum(y^2).
    """
    if isinstance(bars, tuple):
        r, y = (np.asarray(a, dtype=np.float64) for a in bars)
    else:
        r = np.array([b.log_return for b in bars], dtype=np.float64)
        y = np.array([b.order_flow for b in bars], dtype=np.float64)
    if r.shape != y.shape:
        raise ValueError("returns and flow must align")
    if not (math.isfinite(close_tminus2) and close_tminus2 > 0):
        raise ValueError("close_tminus2 must be a positive finite price")
    n = r.size
    if n < MIN_BARS:
        raise ValueError(f"need at least {MIN_BARS} bars, got {n}")
    if intercept:
        yc = y - y.mean()
        syy = float(yc @ yc)
        if syy <= 0:
            raise ValueError("order flow has zero variance")
        lam = float(yc @ (r - r.mean())) / syy
        a = float(r.mean() - lam * y.mean())
        e = r - a - lam * y
        se = math.sqrt(float(np.sum(yc * yc * e * e))) / syy
    else:
        syy = float(y @ y)
        if syy <= 0:
            raise ValueError("order flow has zero variance")
        lam = float(r @ y) / syy
        a = 0.0
        e = r - lam * y
        se = math.sqrt(float(np.sum(y * y * e * e))) / syy
    return LambdaEstimate(lam, se, n, float(close_tminus2), lam / close_tminus2, a, flow_units)


def event_sessions(bundle: DatasetBundle, stock_id: str, event_date: date) -> list[date]:
    """Previous available tick date, the event date, and the next available tick date."""
    days = bundle.tick_dates.get(stock_id, ())
    before = [d for d in days if d < event_date]
    after = [d for d in days if d > event_date]
    out = ([before[-1]] if before else []) + ([event_date] if event_date in days else []) + \
          ([after[0]] if after else [])
    if not out:
        raise ValueError(f"no tick data around {stock_id} {event_date}")
    return out


def event_bars(
    bundle: DatasetBundle,
    stock_id: str,
    event_date: date,
    rule: str = "LR",
    flow_units: str = "shares",
    quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS,
):
    """Signed trades and bar arrays for the three-session window around an event."""
    sessions = event_sessions(bundle, stock_id, event_date)
    ticks = [t for d in sessions for t in bundle.ticks_for(stock_id, d)]
    signed = sign_trades(ticks, None, rule, quote_delay_ms)
    return sessions, signed, bar_arrays(signed, sessions, flow_units)


def lambda_for_event(
    bundle: DatasetBundle,
    stock_id: str,
    event_date: date,
    close_tminus2: float,
    rule: str = "LR",
    flow_units: str = "shares",
    quote_delay_ms: int = DEFAULT_QUOTE_DELAY_MS,
    intercept: bool = False,
) -> LambdaEstimate:
    _, _, (r, y, _) = event_bars(bundle, stock_id, event_date, rule, flow_units, quote_delay_ms)
    return estimate_lambda((r, y), close_tminus2, intercept, flow_units)
