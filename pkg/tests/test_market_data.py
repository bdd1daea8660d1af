import io

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from candlexai.bars import InvalidBarError, OhlcBar, Window
from candlexai.market_data import (
    CsvSchema,
    DatasetFormatError,
    EmptyInputError,
    GenerationError,
    GeneratorConfig,
    SchemaError,
    StratificationError,
    class_targets,
    dataset_from_bytes,
    dataset_to_bytes,
    generate_dataset,
    label_windows,
    parse_csv,
    slide_windows,
    split,
    synthesize_window,
)
from candlexai.patterns import Pattern, detect_pattern

HEADER = b"timestamp,open,high,low,close\n"


def bars(n, start=1.0):
    out = []
    for i in range(n):
        p = start + 0.001 * i
        out.append(OhlcBar(p, p + 0.002, p - 0.001, p + 0.001, timestamp=i * 60_000))
    return out


def test_parse_single_row():
    res = parse_csv(io.BytesIO(HEADER + b"2016-01-02T00:00:00,1.0860,1.0862,1.0858,1.0861\n"))
    assert res.errors == []
    b = res.bars[0]
    assert (b.open, b.high, b.low, b.close) == (1.0860, 1.0862, 1.0858, 1.0861)
    assert b.timestamp == 1451692800000


def test_parse_skips_bad_rows_with_line_numbers():
    data = HEADER + b"1,1.0,1.1,0.9,1.05\n2,1.0,0.8,0.9,1.0\n3,abc,1,1,1\n4,1.0,1.2,0.9,1.1\n"
    res = parse_csv(io.BytesIO(data))
    assert len(res.bars) == 2
    assert [e.line for e in res.errors] == [3, 4]
    assert res.skipped == 2


def test_parse_empty_after_header():
    res = parse_csv(io.BytesIO(HEADER))
    assert res.bars == [] and res.errors == []


def test_parse_missing_column():
    with pytest.raises(SchemaError, match="close"):
        parse_csv(io.BytesIO(b"timestamp,open,high,low\n1,1,1,1\n"))


def test_parse_custom_schema_and_quoting():
    data = b'"Time","O","H","L","C"\n"2016-01-02 00:01:00","1.0","1.5","0.5","1.2"\n'
    res = parse_csv(io.BytesIO(data), CsvSchema("Time", "O", "H", "L", "C"))
    assert res.bars[0].close == 1.2


def test_parse_without_timestamp_column():
    res = parse_csv(io.BytesIO(b"open,high,low,close\n1,2,0.5,1.5\n"), CsvSchema(timestamp=None))
    assert res.bars[0].timestamp is None


@pytest.mark.parametrize("n, stride, count", [(10, 1, 1), (12, 1, 3), (25, 10, 2)])
def test_slide_windows_counts(n, stride, count):
    ws = slide_windows(bars(n), stride)
    assert len(ws) == count
    assert ws[-1].prices[0, 0] == bars(n)[(count - 1) * stride].open


@given(st.integers(10, 60), st.integers(1, 15))
def test_slide_windows_formula(n, stride):
    assert len(slide_windows(bars(n), stride)) == (n - 10) // stride + 1


def test_slide_windows_too_short():
    with pytest.raises(EmptyInputError):
        slide_windows(bars(9), 1)


def test_window_validation():
    with pytest.raises(InvalidBarError):
        Window(np.ones((9, 4)))
    bad = np.ones((10, 4))
    bad[3] = [1.0, 0.9, 0.8, 1.0]  # high below open
    with pytest.raises(InvalidBarError):
        Window(bad)
    with pytest.raises(InvalidBarError):
        OhlcBar(1.0, 1.0, -1.0, 1.0)


@pytest.mark.parametrize("label", range(9))
def test_synthesized_windows_satisfy_oracle(label):
    rng = np.random.default_rng(label)
    for _ in range(25):
        s = synthesize_window(rng, label)
        assert s.label == label
        assert detect_pattern(s.window) == label


def test_morning_star_context_trends_down():
    from candlexai.patterns import trend

    s = synthesize_window(np.random.default_rng(3), Pattern.MORNING_STAR)
    assert trend(s.window).direction == "down"


def test_synthesis_is_deterministic():
    a = synthesize_window(np.random.default_rng(99), 5)
    b = synthesize_window(np.random.default_rng(99), 5)
    assert a.window == b.window


def test_synthesis_retry_cap():
    with pytest.raises(GenerationError, match="label 1"):
        synthesize_window(np.random.default_rng(0), 1, GeneratorConfig(drift_low=0.0, drift_high=0.0, volatility=1e-9, max_retries=3))
    with pytest.raises(ValueError):
        synthesize_window(np.random.default_rng(0), 9)


def test_generate_dataset_counts():
    ds = generate_dataset(class_targets(5), 1)
    assert ds.class_counts() == {0: 10, **{k: 5 for k in range(1, 9)}}
    assert all(detect_pattern(s.window) == s.label for s in ds.samples)


def labeled(per_class, classes=9):
    ds = generate_dataset({k: per_class for k in range(classes)}, 4)
    return ds


def test_split_stratified_80_20():
    ds = generate_dataset({k: 100 for k in range(3)}, 4)
    tr, te = split(ds, 0.8, 1)
    assert tr.class_counts()[0] == 80 and te.class_counts()[0] == 20
    assert tr.split_tag == "train" and te.split_tag == "test"


def test_split_half_is_disjoint_partition():
    ds = labeled(10)
    tr, te = split(ds, 0.5, 3)
    for k in range(9):
        assert tr.class_counts()[k] == 5 and te.class_counts()[k] == 5
    a, b = set(tr.ids.tolist()), set(te.ids.tolist())
    assert not a & b
    assert a | b == set(ds.ids.tolist())


def test_split_deterministic_and_seed_sensitive():
    ds = labeled(10, classes=3)
    assert np.array_equal(split(ds, 0.7, 5)[0].ids, split(ds, 0.7, 5)[0].ids)
    assert not np.array_equal(split(ds, 0.7, 5)[0].ids, split(ds, 0.7, 6)[0].ids)


def test_split_errors():
    ds = labeled(1, classes=2)
    with pytest.raises(StratificationError):
        split(ds, 0.5, 0)
    with pytest.raises(ValueError):
        split(labeled(4, 2), 1.0, 0)


def test_dataset_bytes_round_trip():
    ds = generate_dataset(class_targets(3), 8)
    blob = dataset_to_bytes(ds)
    assert blob[:5] == b"GAFL1"
    back = dataset_from_bytes(blob)
    assert np.array_equal(back.prices, ds.prices)
    assert np.array_equal(back.labels, ds.labels)
    assert dataset_to_bytes(back) == blob


def test_dataset_with_timestamps_round_trip():
    ds = label_windows(slide_windows(bars(30), 10))
    assert ds.timestamps is not None
    back = dataset_from_bytes(dataset_to_bytes(ds))
    assert back.window(1).timestamps == ds.window(1).timestamps
    assert dataset_to_bytes(back) == dataset_to_bytes(ds)


def test_dataset_bad_magic():
    blob = bytearray(dataset_to_bytes(generate_dataset({0: 2}, 1)))
    blob[0:5] = b"XXXX1"
    with pytest.raises(DatasetFormatError, match="magic"):
        dataset_from_bytes(bytes(blob))
    with pytest.raises(DatasetFormatError):
        dataset_from_bytes(dataset_to_bytes(generate_dataset({0: 2}, 1))[:-3])
