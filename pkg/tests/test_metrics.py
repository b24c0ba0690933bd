import math

import pytest
from hypothesis import given, strategies as st

from mela.metrics import HEADER, MetricTable, emit_metrics, fmt, read_metrics

finite = st.floats(allow_nan=False, allow_infinity=False)


def test_empty_table_writes_header_only(tmp_path):
    p = tmp_path / "m.csv"
    emit_metrics(MetricTable(), p, "0123456789abcdef")
    assert p.read_text() == "# config-hash: 0123456789abcdef\n" + ",".join(HEADER) + "\n"
    h, t = read_metrics(p)
    assert h == "0123456789abcdef" and len(t) == 0


def test_rows_are_sorted_and_selectable():
    t = MetricTable()
    t.add("fig3", "mela", "test_mse", 2, 0.1)
    t.add("fig3", "mela", "test_mse", 0, 0.3)
    t.add("fig3", "maml_fo", "test_mse", 0, 3.0)
    assert [(r.model, r.abscissa) for r in t.rows] == [("maml_fo", 0), ("mela", 0), ("mela", 2)]
    assert t.value("mela", "test_mse", 2) == 0.1
    assert len(t.select(model="mela")) == 2
    with pytest.raises(KeyError):
        t.value("mela", "test_mse", 5)


def test_nan_and_negative_counts_rejected():
    t = MetricTable()
    with pytest.raises(ValueError):
        t.add("e", "m", "k", 0, math.nan)
    with pytest.raises(ValueError):
        t.add("e", "m", "k", 0, 1.0, 0.0, -1)


def test_fmt():
    assert fmt(3.0) == "3"
    assert fmt(0.1) == "0.10000000000000001"
    assert float(fmt(1e300)) == 1e300


@given(st.lists(st.tuples(st.sampled_from(["a", "b"]), finite, finite, finite, st.integers(0, 10**6)), max_size=30))
def test_round_trip_is_exact(tmp_path_factory, rows):
    t = MetricTable()
    for model, a, v, s, n in rows:
        t.add("exp", model, "metric", a, v, s, n)
    p = tmp_path_factory.mktemp("m") / "m.csv"
    emit_metrics(t, p, "h")
    _, back = read_metrics(p)
    assert back == t


def test_bad_files(tmp_path):
    p = tmp_path / "x.csv"
    p.write_text("experiment,model\n")
    with pytest.raises(ValueError):
        read_metrics(p)
    p.write_text("# config-hash: h\nwrong,header\n")
    with pytest.raises(ValueError):
        read_metrics(p)
