from __future__ import annotations

import random
import struct
from datetime import date

import numpy as np
import pytest
from numpy.testing import assert_array_equal

from infovalue.io import (
    BadMagicError,
    BundleError,
    DailyReturnRecord,
    EmbeddingStore,
    HeaderError,
    NonFiniteValueError,
    ReportRecord,
    SentenceMeta,
    TableError,
    TickRecord,
    TruncatedPayloadError,
    assemble_bundle,
    load_bundle,
    load_csv_table,
    load_embedding_store,
    write_csv_table,
    write_embedding_store,
)

D = date(2020, 5, 4)


def _header(rows, dims, reserved=0, magic=b"EMB1"):
    return struct.pack("<4sIII", magic, rows, dims, reserved)


def test_store_decodes_header_and_payload(tmp_path):
    p = tmp_path / "e.bin"
    vals = np.arange(6, dtype="<f4")
    p.write_bytes(_header(2, 3) + vals.tobytes())
    store = load_embedding_store(p)
    assert (store.rows, store.dims) == (2, 3)
    assert_array_equal(store.data, vals.reshape(2, 3))


def test_store_round_trip_is_bit_exact(tmp_path):
    rng = np.random.default_rng(3)
    data = rng.standard_normal((100, 8)).astype(np.float32)
    p = tmp_path / "e.bin"
    write_embedding_store(p, data)
    back = load_embedding_store(p)
    assert back.data.tobytes() == data.tobytes()
    write_embedding_store(tmp_path / "f.bin", back)
    assert (tmp_path / "f.bin").read_bytes() == p.read_bytes()


def test_store_layout_is_little_endian(tmp_path):
    p = tmp_path / "e.bin"
    write_embedding_store(p, np.array([[1.0]], dtype=np.float32))
    raw = p.read_bytes()
    assert raw[:4] == b"EMB1"
    assert raw[4:16] == struct.pack("<III", 1, 1, 0)
    assert raw[16:] == struct.pack("<f", 1.0)


@pytest.mark.parametrize("blob, err", [
    (_header(2, 3) + b"\0" * 20, TruncatedPayloadError),
    (b"XXXX" + _header(1, 1)[4:] + b"\0" * 4, BadMagicError),
    (b"EMB", TruncatedPayloadError),
    (b"ZZ", BadMagicError),
    (_header(1, 1, reserved=5) + b"\0" * 4, HeaderError),
    (_header(1, 0), HeaderError),
    (_header(1, 1) + b"\0" * 8, HeaderError),
    (_header(1, 2) + np.array([1.0, np.nan], dtype="<f4").tobytes(), NonFiniteValueError),
    (_header(1, 1) + np.array([np.inf], dtype="<f4").tobytes(), NonFiniteValueError),
])
def test_store_errors_are_distinct(tmp_path, blob, err):
    p = tmp_path / "bad.bin"
    p.write_bytes(blob)
    with pytest.raises(err):
        load_embedding_store(p)


def test_empty_store_round_trips(tmp_path):
    p = tmp_path / "e.bin"
    write_embedding_store(p, np.zeros((0, 4), dtype=np.float32))
    assert load_embedding_store(p).rows == 0


def test_store_is_read_only():
    s = EmbeddingStore(np.ones((2, 2)))
    with pytest.raises(ValueError):
        s.data[0, 0] = 5.0


REPORT_HEADER = "report_id,stock_id,analyst_id,broker_id,release_date,ea_date,embedding_row,deflator\n"


def test_report_table_parses(tmp_path):
    p = tmp_path / "reports.csv"
    p.write_text(REPORT_HEADER + "r2,BBB,a1,b1,2020-05-04,,1,1.0\nr1,AAA,a2,b1,2020-05-05,2020-05-01,0,1.1\n")
    recs = load_csv_table(p, "report")
    assert [r.report_id for r in recs] == ["r1", "r2"]
    assert recs[0].ea_date == date(2020, 5, 1) and recs[1].ea_date is None
    assert recs[0].deflator == 1.1


def test_header_order_does_not_matter(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text("stock_id,date,car,close_tminus2,shares_outstanding\nAAA,2020-05-04,0.01,10.5,\n")
    assert load_csv_table(p, "return")[0] == DailyReturnRecord("AAA", D, 0.01, 10.5, None)


def test_sentence_topic_out_of_range_names_row_and_column(tmp_path):
    p = tmp_path / "s.csv"
    p.write_text("report_id,sentence_idx,topic_id,token_count,embedding_row\n"
                 "r1,0,3,10,0\nr1,1,17,4,1\n")
    with pytest.raises(TableError) as exc:
        load_csv_table(p, "sentence")
    assert exc.value.row == 2 and exc.value.column == "topic_id"


def test_empty_table_with_header(tmp_path):
    p = tmp_path / "r.csv"
    p.write_text(REPORT_HEADER)
    assert load_csv_table(p, "report") == []


@pytest.mark.parametrize("body, column", [
    ("report_id,stock_id,release_date,ea_date,embedding_row,deflator\n", "analyst_id"),
    (REPORT_HEADER + "r1,AAA,a,b,2020-13-01,,0,1\n", "release_date"),
    (REPORT_HEADER + "r1,AAA,a,b,2020-05-01,2020-05-03,0,1\n", "release_date"),
    (REPORT_HEADER + "r1,AAA,a,b,2020-05-01,,x,1\n", "embedding_row"),
    (REPORT_HEADER + "r1,AAA,a,b,2020-05-01,,0,-1\n", "deflator"),
])
def test_report_table_errors(tmp_path, body, column):
    p = tmp_path / "r.csv"
    p.write_text(body)
    with pytest.raises(TableError) as exc:
        load_csv_table(p, "report")
    assert exc.value.column == column


def test_tick_invariants(tmp_path):
    head = "stock_id,date,time_ms,price,size,bid,ask,kind\n"
    p = tmp_path / "t.csv"
    p.write_text(head + "AAA,2020-05-04,40000000,10.0,100,10.02,10.00,quote\n")
    with pytest.raises(TableError, match="ask below bid"):
        load_csv_table(p, "tick")
    p.write_text(head + "AAA,2020-05-04,1000,10.0,100,,,trade\n")
    with pytest.raises(TableError) as exc:
        load_csv_table(p, "tick")
    assert exc.value.column == "time_ms"
    p.write_text(head + "AAA,2020-05-04,40000000,10.0,100,,,fill\n")
    with pytest.raises(TableError) as exc:
        load_csv_table(p, "tick")
    assert exc.value.column == "kind"


def test_csv_round_trip_reproduces_floats(tmp_path):
    rng = np.random.default_rng(0)
    ticks = [TickRecord("AAA", D, 34_200_000 + i, float(np.exp(rng.standard_normal())), 1.0 + i,
                        None, None, "trade") for i in range(50)]
    p = tmp_path / "t.csv"
    write_csv_table(p, "tick", ticks)
    assert load_csv_table(p, "tick") == ticks


def _reports(n=3):
    return [ReportRecord(f"r{i}", "AAA", "a", "b", date(2020, 5, 4 + i), None, i) for i in range(n)]


def _returns(n=3):
    return [DailyReturnRecord("AAA", date(2020, 5, 4 + i), 0.01 * i, 10.0) for i in range(n)]


def test_bundle_groups_sentences():
    sents = [SentenceMeta("r0", k, k, 5, k) for k in range(3)]
    b = assemble_bundle(_reports(1), sents, (), _returns(1),
                        {"report": EmbeddingStore(np.zeros((1, 2))),
                         "sentence": EmbeddingStore(np.zeros((3, 2)))})
    assert len(b.sentences_for("r0")) == 3
    assert b.unmatched_reports == ()


def test_bundle_flags_unmatched_reports():
    b = assemble_bundle(_reports(3), (), (), _returns(2), {"report": EmbeddingStore(np.zeros((3, 2)))})
    assert b.unmatched_reports == ("r2",)
    assert len(b.matched_reports) + len(b.unmatched_reports) == len(b.reports)


def test_bundle_flags_missing_close():
    rets = _returns(2)
    rets[1] = DailyReturnRecord("AAA", rets[1].date, 0.0, None)
    b = assemble_bundle(_reports(2), returns=rets, stores={"report": EmbeddingStore(np.zeros((2, 2)))})
    assert b.missing_close == ("r1",)


def test_bundle_rejects_duplicate_report_id():
    reps = _reports(2) + [_reports(1)[0]]
    with pytest.raises(BundleError, match="duplicate report_id"):
        assemble_bundle(reps, stores={"report": EmbeddingStore(np.zeros((3, 2)))})


def test_bundle_rejects_dangling_embedding_row():
    with pytest.raises(BundleError, match="dangling"):
        assemble_bundle(_reports(3), stores={"report": EmbeddingStore(np.zeros((2, 2)))})


def test_bundle_rejects_unknown_sentence_report():
    with pytest.raises(BundleError):
        assemble_bundle(_reports(1), [SentenceMeta("zz", 0, 0, 1, 0)],
                        stores={"report": EmbeddingStore(np.zeros((1, 2))),
                                "sentence": EmbeddingStore(np.zeros((1, 2)))})


def test_bundle_is_input_order_insensitive(tmp_path, small_dataset):
    b = small_dataset.bundle
    rnd = random.Random(5)
    parts = [list(b.reports), list(b.sentences), list(b.ticks), list(b.returns)]
    for p in parts:
        rnd.shuffle(p)
    b2 = assemble_bundle(*parts, stores=b.stores)
    assert b2.reports == b.reports and b2.sentences == b.sentences
    assert b2.ticks == b.ticks and b2.returns == b.returns
    assert b2.return_by_report == b.return_by_report
    assert b2.tick_slices == b.tick_slices


def test_bundle_files_round_trip(tmp_path, small_dataset):
    from infovalue.kyle import write_dataset

    write_dataset(small_dataset, tmp_path)
    b = load_bundle(tmp_path)
    ref = small_dataset.bundle
    assert b.reports == ref.reports and b.returns == ref.returns
    assert b.ticks == ref.ticks and b.sentences == ref.sentences
    for name in ("report", "sentence", "revision"):
        assert b.stores[name].data.tobytes() == ref.stores[name].data.tobytes()


def test_ticks_are_indexed_by_stock_and_date(small_dataset):
    b = small_dataset.bundle
    for (stock, day), (lo, hi) in b.tick_slices.items():
        assert all(t.stock_id == stock and t.date == day for t in b.ticks[lo:hi])
    assert sum(hi - lo for lo, hi in b.tick_slices.values()) == len(b.ticks)
