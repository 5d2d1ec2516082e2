"""Out-of-sample R-squared against a zero forecast and the cross-sectional Diebold-Mariano test."""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass
from typing import Hashable, Iterable, Mapping, Sequence

import numpy as np

from .window import PredictionRecord

__all__ = [
    "r2_oos",
    "r2_oos_arrays",
    "r2_oos_by_year",
    "DmResult",
    "default_dm_lag",
    "newey_west_variance",
    "dm_test",
    "dm_test_grouped",
    "dm_test_records",
    "dm_vs_zero",
]


def r2_oos_arrays(r: Sequence[float], r_hat: Sequence[float]) -> float:
    """1 - sum (r - r_hat)^2 / sum r^2. The denominator is not demeaned."""
    r = np.asarray(r, dtype=np.float64)
    r_hat = np.asarray(r_hat, dtype=np.float64)
    if r.shape != r_hat.shape:
        raise ValueError("r and r_hat must have the same shape")
    if r.size == 0:
        raise ValueError("no predictions")
    denom = float(r @ r)
    if denom == 0:
        raise ValueError("every realized return is zero; R2_oos undefined")
    e = r - r_hat
    return 1.0 - float(e @ e) / denom


def r2_oos(records: Iterable[PredictionRecord]) -> float:
    recs = list(records)
    return r2_oos_arrays([p.r for p in recs], [p.r_hat for p in recs])


def r2_oos_by_year(records: Iterable[PredictionRecord]) -> dict[int, float]:
    groups: dict[int, list[PredictionRecord]] = defaultdict(list)
    for p in records:
        groups[p.date.year].append(p)
    return {y: r2_oos(groups[y]) for y in sorted(groups)}


@dataclass(frozen=True)
class DmResult:
    statistic: float
    periods: int
    lag: int
    mean_differential: float = 0.0


def default_dm_lag(periods: int) -> int:
    return int(math.floor(periods ** (1.0 / 3.0) + 1e-12))


def newey_west_variance(d: Sequence[float], lag: int) -> float:
    """Bartlett-kernel HAC variance of the sample mean of ``d``."""
    d = np.asarray(d, dtype=np.float64)
    T = d.size
    if lag < 0:
        raise ValueError("lag must be nonnegative")
    u = d - d.mean()
    lrv = float(u @ u) / T
    for l in range(1, min(lag, T - 1) + 1):
        gamma = float(u[l:] @ u[:-l]) / T
        lrv += 2.0 * (1.0 - l / (lag + 1.0)) * gamma
    return lrv / T


def dm_test_grouped(
    groups: Mapping[Hashable, tuple[Sequence[float], Sequence[float]]],
    lag: int | None = None,
    min_periods: int = 8,
) -> DmResult:
    """DM statistic on per-period cross-sectional mean loss differentials.

    ``groups`` maps each period to the squared errors of model a and model b for the
    names observed in that period. A positive statistic means b is more accurate.
    """
    keys = sorted(groups)
    if len(keys) < min_periods:
        raise ValueError(f"DM test needs at least {min_periods} periods, got {len(keys)}")
    d = np.empty(len(keys))
    for i, k in enumerate(keys):
        a, b = (np.asarray(v, dtype=np.float64) for v in groups[k])
        if a.size == 0 or a.size != b.size:
            raise ValueError(f"period {k!r} has no observations or mismatched error counts")
        d[i] = float(np.mean(a - b))
    T = d.size
    L = default_dm_lag(T) if lag is None else int(lag)
    mean_d = float(d.mean())
    if np.all(d == d[0]):
        if mean_d == 0:
            return DmResult(0.0, T, L, 0.0)
        raise ValueError("loss differential is constant and nonzero; DM statistic undefined")
    var = newey_west_variance(d, L)
    if var <= 0:
        raise ValueError("non-positive long-run variance of the loss differential")
    return DmResult(mean_d / math.sqrt(var), T, L, mean_d)


def dm_test(
    errors_a: Sequence[float],
    errors_b: Sequence[float],
    dates: Sequence[Hashable],
    lag: int | None = None,
    min_periods: int = 8,
) -> DmResult:
    """Group aligned squared errors by ``dates`` and run ``dm_test_grouped``."""
    a = np.asarray(errors_a, dtype=np.float64)
    b = np.asarray(errors_b, dtype=np.float64)
    if not (a.shape == b.shape == (len(dates),)):
        raise ValueError("errors_a, errors_b and dates must be aligned 1-D sequences")
    if not (np.isfinite(a).all() and np.isfinite(b).all()):
        raise ValueError("squared errors must be finite")
    idx: dict[Hashable, list[int]] = defaultdict(list)
    for i, t in enumerate(dates):
        idx[t].append(i)
    groups = {t: (a[ix], b[ix]) for t, ix in idx.items()}
    return dm_test_grouped(groups, lag, min_periods)


def dm_test_records(
    records_a: Iterable[PredictionRecord],
    records_b: Iterable[PredictionRecord],
    lag: int | None = None,
) -> DmResult:
    """Compare two prediction sets on the reports they share."""
    by_id = {p.report_id: p for p in records_b}
    ea, eb, dates = [], [], []
    for p in records_a:
        q = by_id.get(p.report_id)
        if q is None:
            continue
        ea.append((p.r - p.r_hat) ** 2)
        eb.append((q.r - q.r_hat) ** 2)
        dates.append(p.date)
    return dm_test(ea, eb, dates, lag)


def dm_vs_zero(records: Iterable[PredictionRecord], lag: int | None = None) -> DmResult:
    """Model against the zero forecast; positive when the model beats zero."""
    recs = list(records)
    zero = [p.r ** 2 for p in recs]
    model = [(p.r - p.r_hat) ** 2 for p in recs]
    return dm_test(zero, model, [p.date for p in recs], lag)
