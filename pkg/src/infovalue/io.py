"""Data formats: the binary embedding store, the four CSV tables, and the joined bundle.

Everything the pipeline consumes enters through this module. Tables are parsed
into frozen record dataclasses, validated against their invariants and sorted
into a canonical order so that the bundle does not depend on input row order.
"""

from __future__ import annotations

import csv
import math
import struct
from dataclasses import dataclass, field, fields
from datetime import date
from pathlib import Path
from typing import Any, Callable, Iterable, Mapping, Sequence

import numpy as np

__all__ = [
    "SESSION_OPEN_MS",
    "SESSION_CLOSE_MS",
    "N_TOPICS",
    "EmbeddingStore",
    "EmbeddingLoadError",
    "BadMagicError",
    "HeaderError",
    "TruncatedPayloadError",
    "NonFiniteValueError",
    "TableError",
    "BundleError",
    "ReportRecord",
    "SentenceMeta",
    "TickRecord",
    "DailyReturnRecord",
    "DatasetBundle",
    "SCHEMAS",
    "load_embedding_store",
    "write_embedding_store",
    "load_csv_table",
    "write_csv_table",
    "assemble_bundle",
    "load_bundle",
    "BUNDLE_FILES",
]

SESSION_OPEN_MS = 34_200_000  # 09:30
SESSION_CLOSE_MS = 57_600_000  # 16:00
N_TOPICS = 17

_MAGIC = b"EMB1"
_HEADER = struct.Struct("<4sIII")


# --------------------------------------------------------------------------
# embedding store
# --------------------------------------------------------------------------


class EmbeddingLoadError(ValueError):
    """Base class for malformed embedding store files."""


class BadMagicError(EmbeddingLoadError):
    pass


class HeaderError(EmbeddingLoadError):
    pass


class TruncatedPayloadError(EmbeddingLoadError):
    pass


class NonFiniteValueError(EmbeddingLoadError):
    pass


@dataclass(frozen=True, eq=False)
class EmbeddingStore:
    """Dense row-major matrix of float32 vectors, one row per embedded item."""

    data: np.ndarray

    def __post_init__(self) -> None:
        arr = np.ascontiguousarray(self.data, dtype=np.float32)
        if arr.ndim != 2:
            raise ValueError(f"embedding store must be 2-D, got shape {arr.shape}")
        if arr.shape[1] == 0:
            raise ValueError("embedding dimension must be positive")
        if not np.isfinite(arr).all():
            raise NonFiniteValueError("embedding store contains non-finite values")
        arr.setflags(write=False)
        object.__setattr__(self, "data", arr)

    @property
    def rows(self) -> int:
        return int(self.data.shape[0])

    @property
    def dims(self) -> int:
        return int(self.data.shape[1])

    def __len__(self) -> int:
        return self.rows


def write_embedding_store(path: str | Path, store: EmbeddingStore | np.ndarray) -> None:
    if not isinstance(store, EmbeddingStore):
        store = EmbeddingStore(np.asarray(store))
    header = _HEADER.pack(_MAGIC, store.rows, store.dims, 0)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(store.data.astype("<f4", copy=False).tobytes())


def load_embedding_store(path: str | Path) -> EmbeddingStore:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        if not _MAGIC.startswith(raw[:4]):
            raise BadMagicError(f"{path}: not an embedding store (bad magic)")
        raise TruncatedPayloadError(f"{path}: file shorter than the 16-byte header")
    magic, rows, dims, reserved = _HEADER.unpack_from(raw)
    if magic != _MAGIC:
        raise BadMagicError(f"{path}: bad magic {magic!r}, expected {_MAGIC!r}")
    if reserved != 0:
        raise HeaderError(f"{path}: reserved header bytes must be zero")
    if dims == 0:
        raise HeaderError(f"{path}: header declares zero dimensions")
    expected = rows * dims * 4
    payload = len(raw) - _HEADER.size
    if payload < expected:
        raise TruncatedPayloadError(
            f"{path}: payload has {payload} bytes, header declares {rows}x{dims} float32 ({expected} bytes)"
        )
    if payload > expected:
        raise HeaderError(f"{path}: {payload - expected} trailing bytes after declared payload")
    data = np.frombuffer(raw, dtype="<f4", count=rows * dims, offset=_HEADER.size)
    data = data.reshape(rows, dims).astype(np.float32)
    if not np.isfinite(data).all():
        bad = int(np.argwhere(~np.isfinite(data))[0, 0])
        raise NonFiniteValueError(f"{path}: non-finite value in row {bad}")
    return EmbeddingStore(data)


# --------------------------------------------------------------------------
# tabular records
# --------------------------------------------------------------------------


class TableError(ValueError):
    """A CSV table failed to parse or validate; names the offending row and column."""

    def __init__(self, message: str, *, path: str | None = None, row: int | None = None,
                 column: str | None = None):
        where = []
        if path is not None:
            where.append(str(path))
        if row is not None:
            where.append(f"row {row}")
        if column is not None:
            where.append(f"column {column!r}")
        super().__init__(f"{': '.join([', '.join(where), message]) if where else message}")
        self.path = path
        self.row = row
        self.column = column


@dataclass(frozen=True, slots=True)
class ReportRecord:
    report_id: str
    stock_id: str
    analyst_id: str
    broker_id: str
    release_date: date
    ea_date: date | None
    embedding_row: int | None
    deflator: float = 1.0


@dataclass(frozen=True, slots=True)
class SentenceMeta:
    report_id: str
    sentence_idx: int
    topic_id: int
    token_count: int
    embedding_row: int


@dataclass(frozen=True, slots=True)
class TickRecord:
    stock_id: str
    date: date
    time_ms: int
    price: float
    size: float
    bid: float | None
    ask: float | None
    kind: str  # "trade" | "quote"


@dataclass(frozen=True, slots=True)
class DailyReturnRecord:
    stock_id: str
    date: date
    car: float
    close_tminus2: float | None
    shares_outstanding: float | None = None


def _parse_str(s: str) -> str:
    if s == "":
        raise ValueError("empty identifier")
    return s


def _parse_int(s: str) -> int:
    return int(s)


def _parse_float(s: str) -> float:
    return float(s)


def _parse_date(s: str) -> date:
    return date.fromisoformat(s)


def _parse_kind(s: str) -> str:
    if s not in ("trade", "quote"):
        raise ValueError(f"kind must be 'trade' or 'quote', got {s!r}")
    return s


def _optional(parse: Callable[[str], Any]) -> Callable[[str], Any]:
    def inner(s: str) -> Any:
        return None if s == "" else parse(s)

    return inner


def _fmt(value: Any) -> str:
    if value is None:
        return ""
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, date):
        return value.isoformat()
    return str(value)


def _positive_finite(value: float | None) -> bool:
    return value is None or (math.isfinite(value) and value > 0)


def _check_report(rec: ReportRecord) -> tuple[str, str] | None:
    if rec.ea_date is not None and rec.release_date < rec.ea_date:
        return "release_date", "release_date precedes ea_date"
    if rec.embedding_row is not None and rec.embedding_row < 0:
        return "embedding_row", "negative embedding_row"
    if not (math.isfinite(rec.deflator) and rec.deflator > 0):
        return "deflator", "deflator must be positive and finite"
    return None


def _check_sentence(rec: SentenceMeta) -> tuple[str, str] | None:
    if rec.sentence_idx < 0:
        return "sentence_idx", "negative sentence_idx"
    if not 0 <= rec.topic_id < N_TOPICS:
        return "topic_id", f"topic_id {rec.topic_id} outside [0, {N_TOPICS - 1}]"
    if rec.token_count < 1:
        return "token_count", "token_count must be >= 1"
    if rec.embedding_row < 0:
        return "embedding_row", "negative embedding_row"
    return None


def _check_tick(rec: TickRecord) -> tuple[str, str] | None:
    if not SESSION_OPEN_MS <= rec.time_ms <= SESSION_CLOSE_MS:
        return "time_ms", "timestamp outside the trading session"
    for name in ("price", "size", "bid", "ask"):
        if not _positive_finite(getattr(rec, name)):
            return name, f"{name} must be positive and finite"
    if rec.bid is not None and rec.ask is not None and rec.ask < rec.bid:
        return "ask", "ask below bid"
    if rec.kind == "quote" and (rec.bid is None or rec.ask is None):
        return "bid" if rec.bid is None else "ask", "quote rows need both bid and ask"
    return None


def _check_return(rec: DailyReturnRecord) -> tuple[str, str] | None:
    if not math.isfinite(rec.car):
        return "car", "car must be finite"
    if not _positive_finite(rec.close_tminus2):
        return "close_tminus2", "close_tminus2 must be positive"
    if not _positive_finite(rec.shares_outstanding):
        return "shares_outstanding", "shares_outstanding must be positive"
    return None


_KIND_RANK = {"quote": 0, "trade": 1}


@dataclass(frozen=True)
class _Schema:
    name: str
    record: type
    parsers: Mapping[str, Callable[[str], Any]]
    check: Callable[[Any], tuple[str, str] | None]
    sort_key: Callable[[Any], tuple]

    @property
    def columns(self) -> tuple[str, ...]:
        return tuple(f.name for f in fields(self.record))


def _none_last(x: float | None) -> float:
    return -1.0 if x is None else x


SCHEMAS: dict[str, _Schema] = {
    "report": _Schema(
        "report",
        ReportRecord,
        {
            "report_id": _parse_str,
            "stock_id": _parse_str,
            "analyst_id": _parse_str,
            "broker_id": _parse_str,
            "release_date": _parse_date,
            "ea_date": _optional(_parse_date),
            "embedding_row": _optional(_parse_int),
            "deflator": _parse_float,
        },
        _check_report,
        lambda r: (r.stock_id, r.release_date, r.report_id),
    ),
    "sentence": _Schema(
        "sentence",
        SentenceMeta,
        {
            "report_id": _parse_str,
            "sentence_idx": _parse_int,
            "topic_id": _parse_int,
            "token_count": _parse_int,
            "embedding_row": _parse_int,
        },
        _check_sentence,
        lambda s: (s.report_id, s.sentence_idx, s.topic_id, s.token_count, s.embedding_row),
    ),
    "tick": _Schema(
        "tick",
        TickRecord,
        {
            "stock_id": _parse_str,
            "date": _parse_date,
            "time_ms": _parse_int,
            "price": _parse_float,
            "size": _parse_float,
            "bid": _optional(_parse_float),
            "ask": _optional(_parse_float),
            "kind": _parse_kind,
        },
        _check_tick,
        lambda t: (t.stock_id, t.date, t.time_ms, _KIND_RANK[t.kind], t.price, t.size,
                   _none_last(t.bid), _none_last(t.ask)),
    ),
    "return": _Schema(
        "return",
        DailyReturnRecord,
        {
            "stock_id": _parse_str,
            "date": _parse_date,
            "car": _parse_float,
            "close_tminus2": _optional(_parse_float),
            "shares_outstanding": _optional(_parse_float),
        },
        _check_return,
        lambda r: (r.stock_id, r.date, r.car, _none_last(r.close_tminus2)),
    ),
}


def _schema(name: str) -> _Schema:
    try:
        return SCHEMAS[name]
    except KeyError:
        raise ValueError(f"unknown schema {name!r}; expected one of {sorted(SCHEMAS)}") from None


def validate_records(schema: str, records: Iterable[Any]) -> list[Any]:
    """Check invariants of already-constructed records and return them canonically sorted."""
    sch = _schema(schema)
    out = list(records)
    for i, rec in enumerate(out):
        problem = sch.check(rec)
        if problem is not None:
            raise TableError(problem[1], row=i + 1, column=problem[0])
    out.sort(key=sch.sort_key)
    return out


def load_csv_table(path: str | Path, schema: str) -> list[Any]:
    """Parse one CSV table into validated records sorted by the schema's canonical key.

    Data rows are numbered from 1 (the header is row 0) in error messages.
    """
    sch = _schema(schema)
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise TableError("missing header row", path=str(path)) from None
        header = [h.strip() for h in header]
        expected = set(sch.columns)
        missing = expected.difference(header)
        if missing:
            raise TableError(f"missing column(s) {sorted(missing)}", path=str(path), row=0,
                             column=sorted(missing)[0])
        extra = [h for h in header if h not in expected]
        if extra:
            raise TableError(f"unexpected column(s) {extra}", path=str(path), row=0, column=extra[0])
        if len(set(header)) != len(header):
            raise TableError("duplicate column names", path=str(path), row=0)
        order = [(header.index(c), c, sch.parsers[c]) for c in sch.columns]
        records = []
        for rownum, row in enumerate(reader, start=1):
            if not row:
                continue
            if len(row) != len(header):
                raise TableError(f"expected {len(header)} fields, found {len(row)}",
                                 path=str(path), row=rownum)
            values = {}
            for idx, col, parse in order:
                try:
                    values[col] = parse(row[idx])
                except ValueError as exc:
                    raise TableError(f"cannot parse {row[idx]!r}: {exc}", path=str(path),
                                     row=rownum, column=col) from None
            rec = sch.record(**values)
            problem = sch.check(rec)
            if problem is not None:
                raise TableError(problem[1], path=str(path), row=rownum, column=problem[0])
            records.append(rec)
    records.sort(key=sch.sort_key)
    return records


def write_csv_table(path: str | Path, schema: str, records: Iterable[Any]) -> None:
    sch = _schema(schema)
    cols = sch.columns
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(cols)
        for rec in records:
            writer.writerow([_fmt(getattr(rec, c)) for c in cols])


# --------------------------------------------------------------------------
# bundle
# --------------------------------------------------------------------------


class BundleError(ValueError):
    pass


@dataclass(frozen=True, eq=False)
class DatasetBundle:
    """All inputs joined and indexed; treat as read-only once assembled."""

    reports: tuple[ReportRecord, ...]
    sentences: tuple[SentenceMeta, ...]
    ticks: tuple[TickRecord, ...]
    returns: tuple[DailyReturnRecord, ...]
    stores: Mapping[str, EmbeddingStore]
    report_index: Mapping[str, int] = field(repr=False)
    sentences_by_report: Mapping[str, tuple[int, ...]] = field(repr=False)
    return_by_report: Mapping[str, int] = field(repr=False)
    unmatched_reports: tuple[str, ...] = ()
    missing_close: tuple[str, ...] = ()
    tick_slices: Mapping[tuple[str, date], tuple[int, int]] = field(default_factory=dict, repr=False)
    tick_dates: Mapping[str, tuple[date, ...]] = field(default_factory=dict, repr=False)

    @property
    def matched_reports(self) -> tuple[ReportRecord, ...]:
        return tuple(r for r in self.reports if r.report_id in self.return_by_report)

    def return_for(self, report_id: str) -> DailyReturnRecord | None:
        i = self.return_by_report.get(report_id)
        return None if i is None else self.returns[i]

    def sentences_for(self, report_id: str) -> list[SentenceMeta]:
        return [self.sentences[i] for i in self.sentences_by_report.get(report_id, ())]

    def ticks_for(self, stock_id: str, day: date) -> tuple[TickRecord, ...]:
        sl = self.tick_slices.get((stock_id, day))
        return () if sl is None else self.ticks[sl[0]:sl[1]]


def assemble_bundle(
    reports: Iterable[ReportRecord],
    sentences: Iterable[SentenceMeta] = (),
    ticks: Iterable[TickRecord] = (),
    returns: Iterable[DailyReturnRecord] = (),
    stores: Mapping[str, EmbeddingStore] | None = None,
) -> DatasetBundle:
    """Join the tables into one bundle.

    Reports are matched to returns on ``(stock_id, release_date)``; reports without
    a return row are kept and listed in ``unmatched_reports``. Store names: ``report``
    (full-context embeddings), ``sentence`` (sentence embeddings), ``revision``
    (optional numeric report features sharing the report row index).
    """
    stores = dict(stores or {})
    reports = sorted(reports, key=SCHEMAS["report"].sort_key)
    sentences = sorted(sentences, key=SCHEMAS["sentence"].sort_key)
    ticks = sorted(ticks, key=SCHEMAS["tick"].sort_key)
    returns = sorted(returns, key=SCHEMAS["return"].sort_key)

    report_index: dict[str, int] = {}
    for i, rep in enumerate(reports):
        if rep.report_id in report_index:
            raise BundleError(f"duplicate report_id {rep.report_id!r}")
        report_index[rep.report_id] = i

    for name in ("report", "revision"):
        store = stores.get(name)
        for rep in reports:
            if rep.embedding_row is None:
                continue
            if store is None:
                if name == "report":
                    raise BundleError(f"report {rep.report_id!r} has embedding_row but no report store")
                continue
            if rep.embedding_row >= store.rows:
                raise BundleError(
                    f"report {rep.report_id!r}: dangling embedding_row {rep.embedding_row} "
                    f"(store {name!r} has {store.rows} rows)"
                )

    sent_store = stores.get("sentence")
    by_report: dict[str, list[int]] = {}
    seen_sent: set[tuple[str, int]] = set()
    for i, s in enumerate(sentences):
        if s.report_id not in report_index:
            raise BundleError(f"sentence references unknown report_id {s.report_id!r}")
        key = (s.report_id, s.sentence_idx)
        if key in seen_sent:
            raise BundleError(f"duplicate sentence {key}")
        seen_sent.add(key)
        if sent_store is None:
            raise BundleError("sentence table given without a sentence embedding store")
        if s.embedding_row >= sent_store.rows:
            raise BundleError(
                f"sentence {key}: dangling embedding_row {s.embedding_row} "
                f"(sentence store has {sent_store.rows} rows)"
            )
        by_report.setdefault(s.report_id, []).append(i)

    ret_index: dict[tuple[str, date], int] = {}
    for i, r in enumerate(returns):
        key = (r.stock_id, r.date)
        if key in ret_index:
            raise BundleError(f"duplicate return row for {key}")
        ret_index[key] = i
    return_by_report: dict[str, int] = {}
    unmatched: list[str] = []
    missing_close: list[str] = []
    for rep in reports:
        j = ret_index.get((rep.stock_id, rep.release_date))
        if j is None:
            unmatched.append(rep.report_id)
            continue
        return_by_report[rep.report_id] = j
        if returns[j].close_tminus2 is None:
            missing_close.append(rep.report_id)

    tick_slices: dict[tuple[str, date], tuple[int, int]] = {}
    tick_dates: dict[str, list[date]] = {}
    start = 0
    for i in range(1, len(ticks) + 1):
        if i == len(ticks) or (ticks[i].stock_id, ticks[i].date) != (ticks[start].stock_id, ticks[start].date):
            key = (ticks[start].stock_id, ticks[start].date)
            tick_slices[key] = (start, i)
            tick_dates.setdefault(key[0], []).append(key[1])
            start = i

    return DatasetBundle(
        reports=tuple(reports),
        sentences=tuple(sentences),
        ticks=tuple(ticks),
        returns=tuple(returns),
        stores=stores,
        report_index=report_index,
        sentences_by_report={k: tuple(v) for k, v in by_report.items()},
        return_by_report=return_by_report,
        unmatched_reports=tuple(unmatched),
        missing_close=tuple(missing_close),
        tick_slices=tick_slices,
        tick_dates={k: tuple(v) for k, v in tick_dates.items()},
    )


BUNDLE_FILES = {
    "reports": "reports.csv",
    "sentences": "sentences.csv",
    "ticks": "ticks.csv",
    "returns": "returns.csv",
    "report_store": "embeddings.bin",
    "sentence_store": "sentence_embeddings.bin",
    "revision_store": "revisions.bin",
}


def load_bundle(directory: str | Path, *, with_ticks: bool = True) -> DatasetBundle:
    """Load the standard file set from ``directory``; only reports.csv is mandatory."""
    d = Path(directory)

    def table(key: str, schema: str) -> Sequence[Any]:
        p = d / BUNDLE_FILES[key]
        return load_csv_table(p, schema) if p.exists() else []

    if not (d / BUNDLE_FILES["reports"]).exists():
        raise FileNotFoundError(f"{d / BUNDLE_FILES['reports']} not found")
    stores = {}
    for key, name in (("report_store", "report"), ("sentence_store", "sentence"),
                      ("revision_store", "revision")):
        p = d / BUNDLE_FILES[key]
        if p.exists():
            stores[name] = load_embedding_store(p)
    return assemble_bundle(
        table("reports", "report"),
        table("sentences", "sentence"),
        table("ticks", "tick") if with_ticks else [],
        table("returns", "return"),
        stores,
    )
