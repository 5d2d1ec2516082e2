"""Annual expanding-window estimation producing out-of-sample predictions."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from datetime import date
from typing import Iterable, Sequence

import numpy as np

from ..embed import SentenceIndex
from ..io import DatasetBundle
from .pls import fit_pls, pls_rank_bound
from .ridge import DEFAULT_PENALTY_GRID, fit_ridge, lowest_index, penalty_path_mse, validation_split

__all__ = [
    "INPUT_KINDS",
    "MODEL_KINDS",
    "DEFAULT_PLS_GRID",
    "WindowPlan",
    "PredictionRecord",
    "WindowFit",
    "FeatureSet",
    "build_features",
    "run_expanding_window",
    "default_test_years",
    "predictions_by_key",
]

INPUT_KINDS = ("text", "sentence", "revision", "combined", "zero")
MODEL_KINDS = ("ridge", "pls")
DEFAULT_PLS_GRID = (1, 2, 4, 8, 16, 32)


@dataclass(frozen=True)
class WindowPlan:
    test_years: tuple[int, ...]
    validation_fraction: float = 0.2
    penalty_grid: tuple[float, ...] = DEFAULT_PENALTY_GRID
    pls_grid: tuple[int, ...] = DEFAULT_PLS_GRID
    refit: str = "annual"

    def __post_init__(self) -> None:
        years = tuple(int(y) for y in self.test_years)
        if not years:
            raise ValueError("test_years is empty")
        if any(b <= a for a, b in zip(years, years[1:])):
            raise ValueError("test_years must be strictly ascending")
        if not 0 < self.validation_fraction < 1:
            raise ValueError("validation_fraction must lie in (0, 1)")
        if self.refit != "annual":
            raise ValueError("only annual refitting is supported")
        object.__setattr__(self, "test_years", years)
        object.__setattr__(self, "penalty_grid", tuple(float(p) for p in self.penalty_grid))
        object.__setattr__(self, "pls_grid", tuple(int(p) for p in self.pls_grid))


@dataclass(frozen=True, slots=True)
class PredictionRecord:
    report_id: str
    stock_id: str
    date: date
    r_hat: float
    r: float
    model_kind: str
    input_kind: str
    train_end: date | None = None  # latest date in the training window


@dataclass(frozen=True)
class WindowFit:
    test_year: int
    n_train: int
    n_test: int
    train_end: date
    hyperparameter: float


@dataclass(frozen=True, eq=False)
class FeatureSet:
    """Design matrix for one input kind, rows ordered by (date, report_id)."""

    report_ids: tuple[str, ...]
    stock_ids: tuple[str, ...]
    dates: tuple[date, ...]
    X: np.ndarray
    y: np.ndarray
    excluded: dict[str, int] = field(default_factory=dict)

    def __post_init__(self) -> None:
        n = len(self.report_ids)
        if not (len(self.stock_ids) == len(self.dates) == self.X.shape[0] == self.y.shape[0] == n):
            raise ValueError("feature set columns have inconsistent lengths")

    def __len__(self) -> int:
        return len(self.report_ids)

    def with_matrix(self, X: np.ndarray) -> "FeatureSet":
        return FeatureSet(self.report_ids, self.stock_ids, self.dates, np.asarray(X, dtype=np.float64),
                          self.y, dict(self.excluded))


def default_test_years(dates: Sequence[date], initial_fraction: float = 0.6) -> tuple[int, ...]:
    """Calendar years left to test once at least ``initial_fraction`` of rows precede them.

    The first test year is the earliest year Y such that rows dated before Y make up
    ``initial_fraction`` of the sample or more; every later year is tested too.
    """
    if not 0 < initial_fraction < 1:
        raise ValueError("initial_fraction must lie in (0, 1)")
    years = np.array(sorted(d.year for d in dates), dtype=np.int64)
    if years.size == 0:
        raise ValueError("no dates")
    uniq = np.unique(years)
    for y in uniq[1:]:
        if np.count_nonzero(years < y) >= initial_fraction * years.size:
            return tuple(int(v) for v in uniq[uniq >= y])
    raise ValueError("no calendar year boundary leaves a test sample")


def _base_rows(bundle: DatasetBundle, need_row: bool):
    excluded = {"no return": len(bundle.unmatched_reports)}
    rows = []
    for rep in bundle.reports:
        ret = bundle.return_for(rep.report_id)
        if ret is None:
            continue
        if need_row and rep.embedding_row is None:
            excluded["no embedding"] = excluded.get("no embedding", 0) + 1
            continue
        rows.append((rep.release_date, rep.report_id, rep, ret))
    rows.sort(key=lambda t: (t[0], t[1]))
    return rows, {k: v for k, v in excluded.items() if v}


def build_features(
    bundle: DatasetBundle,
    input_kind: str = "text",
    topic_mask: Iterable[int] | str | None = None,
) -> FeatureSet:
    """Assemble (X, y) for reports that have a matching return row.

    Input kinds: ``text`` (full-context store), ``sentence`` (token-weighted sentence
    aggregate restricted to ``topic_mask``), ``revision`` (numeric report features),
    ``combined`` (text and revision side by side), ``zero`` (a single zero column,
    the empty-information benchmark).
    """
    if input_kind not in INPUT_KINDS:
        raise ValueError(f"unknown input_kind {input_kind!r}; expected one of {INPUT_KINDS}")
    need_row = input_kind in ("text", "revision", "combined")
    rows, excluded = _base_rows(bundle, need_row)
    rids = tuple(r[1] for r in rows)
    reports = [r[2] for r in rows]
    y = np.array([r[3].car for r in rows], dtype=np.float64)

    def store_matrix(name: str) -> np.ndarray:
        store = bundle.stores.get(name)
        if store is None:
            raise ValueError(f"input kind {input_kind!r} needs the {name!r} store")
        idx = np.array([rep.embedding_row for rep in reports], dtype=np.int64)
        return store.data[idx].astype(np.float64) if idx.size else np.zeros((0, store.dims))

    if input_kind == "text":
        X = store_matrix("report")
    elif input_kind == "revision":
        X = store_matrix("revision")
    elif input_kind == "combined":
        X = np.hstack([store_matrix("report"), store_matrix("revision")])
    elif input_kind == "sentence":
        X = SentenceIndex(bundle, rids).embeddings(topic_mask)
    else:
        X = np.zeros((len(rows), 1))
    return FeatureSet(rids, tuple(rep.stock_id for rep in reports), tuple(r[0] for r in rows),
                      X, y, excluded)


def _fit_predict(X_tr, y_tr, X_te, model_kind: str, plan: WindowPlan):
    if model_kind == "ridge":
        grid = plan.penalty_grid
        if len(grid) == 1:
            theta = grid[0]
        else:
            n_fit = validation_split(X_tr.shape[0], plan.validation_fraction)
            mse = penalty_path_mse(X_tr[:n_fit], y_tr[:n_fit], X_tr[n_fit:], y_tr[n_fit:], grid)
            theta = grid[lowest_index(mse)]
        model = fit_ridge(X_tr, y_tr, theta)
        return model.predict(X_te), float(theta)
    n_fit = validation_split(X_tr.shape[0], plan.validation_fraction)
    bound = min(pls_rank_bound(X_tr[:n_fit]), pls_rank_bound(X_tr))
    choices = [p for p in plan.pls_grid if 1 <= p <= bound]
    if not choices:
        raise ValueError(f"no PLS component count in {plan.pls_grid} fits rank bound {bound}")
    probe = fit_pls(X_tr[:n_fit], y_tr[:n_fit], max(choices))
    choices = [p for p in choices if p <= probe.components] or [probe.components]
    mse = []
    for p in choices:
        e = probe.truncate(p).predict(X_tr[n_fit:]) - y_tr[n_fit:]
        mse.append(float(e @ e) / e.size)
    model = fit_pls(X_tr, y_tr, choices[lowest_index(mse)])
    return model.predict(X_te), float(model.components)


def run_expanding_window(
    bundle: DatasetBundle | None,
    plan: WindowPlan,
    input_kind: str = "text",
    model_kind: str = "ridge",
    *,
    features: FeatureSet | None = None,
    fit_log: list[WindowFit] | None = None,
    threads: int = 1,
) -> list[PredictionRecord]:
    """Refit once per test year on every row dated before that year; predict the year.

    Hyperparameters (ridge penalty or PLS component count) are chosen on the last
    ``plan.validation_fraction`` of each training window in time order, then the
    model is refit on the whole window. Pass ``features`` to bypass ``build_features``.
    """
    if model_kind not in MODEL_KINDS:
        raise ValueError(f"unknown model_kind {model_kind!r}; expected one of {MODEL_KINDS}")
    if features is None:
        if bundle is None:
            raise ValueError("either a bundle or a feature set is required")
        features = build_features(bundle, input_kind)
    years = np.array([d.year for d in features.dates], dtype=np.int64)

    jobs = []
    for year in plan.test_years:
        train = np.flatnonzero(years < year)
        test = np.flatnonzero(years == year)
        if train.size == 0:
            raise ValueError(f"test year {year} has no training data")
        if test.size == 0:
            raise ValueError(f"test year {year} has no records")
        jobs.append((year, train, test))

    def work(job):
        year, train, test = job
        r_hat, hp = _fit_predict(features.X[train], features.y[train], features.X[test], model_kind, plan)
        return year, train, test, r_hat, hp

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, jobs))
    else:
        results = [work(j) for j in jobs]

    out: list[PredictionRecord] = []
    for year, train, test, r_hat, hp in results:
        train_end = features.dates[train[-1]]
        if fit_log is not None:
            fit_log.append(WindowFit(year, int(train.size), int(test.size), train_end, hp))
        for i, pred in zip(test, r_hat):
            out.append(PredictionRecord(
                features.report_ids[i], features.stock_ids[i], features.dates[i], float(pred),
                float(features.y[i]), model_kind, input_kind, train_end))
    out.sort(key=lambda p: (p.date, p.report_id))
    return out


def predictions_by_key(records: Sequence[PredictionRecord]) -> dict[str, PredictionRecord]:
    return {p.report_id: p for p in records}
