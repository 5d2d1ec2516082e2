"""Dollar information value per event and per analyst, its log decomposition, and
delta-method inference for subsample means.

For an event with realized return r, forecast r_hat and standardized price impact
lambda/p, the explained return variance is r^2 - (r - r_hat)^2 and the information
value is that variance divided by the standardized impact, scaled by a deflator to
constant dollars.
"""

from __future__ import annotations

import math
from collections import Counter, defaultdict
from dataclasses import dataclass
from datetime import date
from typing import Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "WEEK_BINS",
    "Z95",
    "Z99",
    "InfoValueRecord",
    "AnalystInfoValue",
    "DecompositionRecord",
    "Excluded",
    "DeltaSummary",
    "explained_variance",
    "consensus_prediction",
    "info_value",
    "info_value_analyst",
    "decompose_log",
    "decompose_all",
    "taq_vol_variant",
    "ratio_moments",
    "delta_summary",
    "assign_week_bin",
    "annualize",
    "build_event_records",
]

WEEK_BINS = 13
Z95 = 1.96
Z99 = 2.576


@dataclass(frozen=True)
class InfoValueRecord:
    stock_id: str
    date: date
    r: float
    r_hat: float
    explained_var: float
    std_impact: float
    omega: float  # nan when std_impact is zero
    week_bin: int | None = None
    flags: frozenset[str] = frozenset()
    n_reports: int = 1
    deflator: float = 1.0


@dataclass(frozen=True)
class AnalystInfoValue:
    stock_id: str
    analyst_id: str
    date: date
    r_hat_j: float
    omega_j: float
    explained_var: float = 0.0
    flags: frozenset[str] = frozenset()


@dataclass(frozen=True)
class DecompositionRecord:
    log_explained_var: float
    log_price_impact: float
    log_omega: float


class Excluded(ValueError):
    """A record left out of the log decomposition; ``reason`` says why."""

    def __init__(self, reason: str):
        super().__init__(reason)
        self.reason = reason


@dataclass(frozen=True)
class DeltaSummary:
    n: int
    mu_nu: float
    mu_lambda: float
    sigma_nu: float
    sigma_lambda: float
    sigma_nulambda: float
    mean_omega: float
    var_ratio: float  # per-observation approximate variance of nu/lambda
    var_omega: float  # variance of the subsample mean
    se: float
    ci95: tuple[float, float]
    ci99: tuple[float, float]
    clipped: int = 0  # 1 when the first-order variance came out negative and was floored

    def as_dict(self) -> dict:
        return {k: (list(v) if isinstance(v, tuple) else v) for k, v in self.__dict__.items()}


def explained_variance(r: float, r_hat: float) -> float:
    """r^2 - (r - r_hat)^2; equal to r_hat * (2r - r_hat) algebraically."""
    return r * r - (r - r_hat) ** 2


def consensus_prediction(predictions: Iterable[float]) -> float:
    """Arithmetic mean of the forecasts issued for one stock on one day."""
    p = [float(x) for x in predictions]
    if not p:
        raise ValueError("no predictions to average")
    return math.fsum(sorted(p)) / len(p)


def _omega(explained: float, std_impact: float, deflator: float) -> tuple[float, set[str]]:
    flags: set[str] = set()
    if not math.isfinite(std_impact):
        raise ValueError("std_impact must be finite")
    if not (math.isfinite(deflator) and deflator > 0):
        raise ValueError("deflator must be positive and finite")
    if std_impact == 0:
        flags.add("undefined_omega")
        omega = math.nan
    else:
        omega = deflator * explained / std_impact
    if std_impact < 0:
        flags.add("negative_impact")
    if explained < 0:
        flags.add("negative_explained_var")
    return omega, flags


def info_value(
    r: float,
    r_hat: float,
    std_impact: float,
    deflator: float = 1.0,
    *,
    stock_id: str = "",
    day: date | None = None,
    week_bin: int | None = None,
    n_reports: int = 1,
) -> InfoValueRecord:
    """Information value of one event; a zero impact keeps the record with omega = nan."""
    ev = explained_variance(float(r), float(r_hat))
    omega, flags = _omega(ev, float(std_impact), float(deflator))
    return InfoValueRecord(stock_id, day, float(r), float(r_hat), ev, float(std_impact), omega,
                           week_bin, frozenset(flags), n_reports, float(deflator))


def info_value_analyst(
    r: float,
    r_hat_j: float,
    lambda_: float,
    p: float,
    deflator: float = 1.0,
    *,
    stock_id: str = "",
    analyst_id: str = "",
    day: date | None = None,
) -> AnalystInfoValue:
    """Same measure from a single analyst's forecast: p (r^2 - (r - r_hat_j)^2) / lambda."""
    if not (math.isfinite(p) and p > 0):
        raise ValueError("p must be a positive price")
    ev = explained_variance(float(r), float(r_hat_j))
    omega, flags = _omega(ev, float(lambda_) / float(p), float(deflator))
    return AnalystInfoValue(stock_id, analyst_id, day, float(r_hat_j), omega, ev, frozenset(flags))


def decompose_log(record: InfoValueRecord) -> DecompositionRecord:
    """Split log omega into log explained variance minus log price impact.

    Deflation is left out so the identity holds exactly on the logged pieces.
    """
    if record.explained_var < 0:
        raise Excluded("negative explained variance")
    if record.explained_var == 0:
        raise Excluded("zero explained variance")
    if record.std_impact < 0:
        raise Excluded("negative price impact")
    if record.std_impact == 0:
        raise Excluded("zero price impact")
    a = math.log(record.explained_var)
    b = math.log(record.std_impact)
    return DecompositionRecord(a, b, a - b)


def decompose_all(records: Iterable[InfoValueRecord]) -> tuple[list[DecompositionRecord], Counter]:
    out, reasons = [], Counter()
    for rec in records:
        try:
            out.append(decompose_log(rec))
        except Excluded as exc:
            reasons[exc.reason] += 1
    return out, reasons


def taq_vol_variant(r: float, r_hat: float, sigma_v2: float) -> float:
    """Explained variance rescaled to realized intraday volatility.

    [r^2 - (r - r_hat)^2] / r^2 * sigma_v2. Whether overnight returns enter sigma_v2
    is decided by the caller when computing it.
    """
    if r == 0:
        raise ValueError("r must be nonzero")
    if not sigma_v2 >= 0:
        raise ValueError("sigma_v2 must be nonnegative")
    return explained_variance(r, r_hat) / (r * r) * sigma_v2


def ratio_moments(mu_x: float, mu_y: float, var_x: float, var_y: float, cov_xy: float) -> tuple[float, float]:
    """First-order (mean, variance) of X/Y around the means."""
    if mu_y == 0:
        raise ValueError("mean of the denominator is zero")
    g = mu_x / mu_y
    var = (var_x + g * g * var_y - 2.0 * g * cov_xy) / (mu_y * mu_y)
    return g, var


def delta_summary(
    records: Sequence[InfoValueRecord] | None = None,
    *,
    nu: Sequence[float] | None = None,
    lam: Sequence[float] | None = None,
    deflators: Sequence[float] | None = None,
) -> DeltaSummary:
    """Ratio-of-means estimate of the subsample mean information value with a
    delta-method standard error.

    Moments are population moments (divided by n). The per-observation variance of
    the ratio is divided by n for the variance of the subsample mean. Explained
    variances enter raw, negatives included, scaled by each record's deflator.
    """
    if records is not None:
        nu = [r.explained_var * r.deflator for r in records]
        lam = [r.std_impact for r in records]
    if nu is None or lam is None:
        raise ValueError("pass records or both nu and lam")
    x = np.asarray(nu, dtype=np.float64)
    y = np.asarray(lam, dtype=np.float64)
    if deflators is not None:
        x = x * np.asarray(deflators, dtype=np.float64)
    if x.shape != y.shape or x.ndim != 1:
        raise ValueError("nu and lam must be aligned 1-D sequences")
    n = x.size
    if n < 1:
        raise ValueError("empty subsample")
    if not (np.isfinite(x).all() and np.isfinite(y).all()):
        raise ValueError("non-finite input")
    mx, my = float(x.mean()), float(y.mean())
    if my == 0:
        raise ValueError("mean standardized impact is zero")
    dx, dy = x - mx, y - my
    vx, vy, cxy = float(dx @ dx) / n, float(dy @ dy) / n, float(dx @ dy) / n
    mean, var_ratio = ratio_moments(mx, my, vx, vy, cxy)
    clipped = 0
    if var_ratio < 0:
        var_ratio, clipped = 0.0, 1
    var_mean = var_ratio / n
    se = math.sqrt(var_mean)
    return DeltaSummary(n, mx, my, vx, vy, cxy, mean, var_ratio, var_mean, se,
                        (mean - Z95 * se, mean + Z95 * se), (mean - Z99 * se, mean + Z99 * se), clipped)


def assign_week_bin(release_date: date, ea_date: date | None) -> int | None:
    """Week after the earnings announcement, 1..13; None outside that range.

    bin = floor((days - 1) / 7) + 1, so days 1..7 are week 1. A same-day release
    falls in bin 0 and is reported as absent, as are releases before the announcement.
    """
    if ea_date is None:
        return None
    days = (release_date - ea_date).days
    if days < 1:
        return None
    b = (days - 1) // 7 + 1
    return b if b <= WEEK_BINS else None


def annualize(mean_omega: float, report_days_per_year: float) -> float:
    if not report_days_per_year > 0:
        raise ValueError("report_days_per_year must be positive")
    return mean_omega * report_days_per_year


def build_event_records(
    bundle,
    predictions: Sequence,
    std_impacts: Mapping[tuple[str, date], float],
    deflators: Mapping[date, float] | None = None,
) -> tuple[list[InfoValueRecord], list[AnalystInfoValue], Counter]:
    """Join forecasts, realized returns and impacts into per-event and per-analyst records.

    ``predictions`` are PredictionRecords; ``std_impacts`` maps (stock_id, date) to
    lambda/p. Events lacking a t-2 close or an impact estimate are counted in the
    returned Counter and skipped. The week bin and deflator come from the event's
    reports: the bin nearest the announcement, and the first report's deflator
    unless ``deflators`` has an entry for the event date.
    """
    skipped: Counter = Counter()
    missing_close = set(bundle.missing_close)
    groups: dict[tuple[str, date], list] = defaultdict(list)
    for p in predictions:
        if p.report_id in missing_close:
            skipped["missing close"] += 1
            continue
        groups[(p.stock_id, p.date)].append(p)

    events: list[InfoValueRecord] = []
    analysts: list[AnalystInfoValue] = []
    for key in sorted(groups):
        preds = sorted(groups[key], key=lambda p: p.report_id)
        impact = std_impacts.get(key)
        if impact is None:
            skipped["no impact estimate"] += len(preds)
            continue
        reps = [bundle.reports[bundle.report_index[p.report_id]] for p in preds]
        deflator = reps[0].deflator if deflators is None else deflators.get(key[1], reps[0].deflator)
        bins = [assign_week_bin(rep.release_date, rep.ea_date) for rep in reps]
        valid = [b for b in bins if b is not None]
        week = min(valid) if valid else None
        r = preds[0].r
        rec = info_value(r, consensus_prediction(p.r_hat for p in preds), impact, deflator,
                         stock_id=key[0], day=key[1], week_bin=week, n_reports=len(preds))
        events.append(rec)
        ret = bundle.return_for(preds[0].report_id)
        for p, rep in zip(preds, reps):
            lam = impact * ret.close_tminus2
            analysts.append(info_value_analyst(r, p.r_hat, lam, ret.close_tminus2, deflator,
                                               stock_id=key[0], analyst_id=rep.analyst_id, day=key[1]))
    return events, analysts, skipped
