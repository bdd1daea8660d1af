"""Loading, synthesizing and partitioning labeled 10-bar OHLC windows."""
from __future__ import annotations

import csv
import io
import json
import math
import struct
from dataclasses import asdict, dataclass, field
from datetime import datetime, timezone
from pathlib import Path
from typing import BinaryIO, Iterable, Optional, Sequence

import numpy as np

from .bars import TREND_BARS, WINDOW_LEN, InvalidBarError, OhlcBar, Window
from .patterns import DEFAULT_THRESHOLDS, NUM_LABELS, Pattern, Thresholds, detect_pattern

DATASET_MAGIC = b"GAFL1"


class SchemaError(ValueError):
    pass


class EmptyInputError(ValueError):
    pass


class GenerationError(RuntimeError):
    pass


class StratificationError(ValueError):
    pass


class DatasetFormatError(ValueError):
    pass


@dataclass(frozen=True)
class LabeledWindow:
    window: Window
    label: int


# ---------------------------------------------------------------------------
# CSV ingestion
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class CsvSchema:
    timestamp: Optional[str] = "timestamp"
    open: str = "open"
    high: str = "high"
    low: str = "low"
    close: str = "close"


@dataclass
class RowError:
    line: int
    message: str


@dataclass
class ParseResult:
    bars: list[OhlcBar] = field(default_factory=list)
    errors: list[RowError] = field(default_factory=list)

    @property
    def skipped(self) -> int:
        return len(self.errors)


def _parse_timestamp(text: str) -> int:
    text = text.strip()
    try:
        return int(float(text))
    except ValueError:
        pass
    dt = datetime.fromisoformat(text.replace("Z", "+00:00"))
    if dt.tzinfo is None:
        dt = dt.replace(tzinfo=timezone.utc)
    return int(round(dt.timestamp() * 1000))


def parse_csv(stream: BinaryIO | io.TextIOBase, schema: CsvSchema = CsvSchema()) -> ParseResult:
    """Read OHLC bars from a CSV with a header row.

    Rows with unparsable prices or broken OHLC ordering are skipped and
    reported with their 1-based line number (the header is line 1).
    """
    text = stream if isinstance(stream, io.TextIOBase) else io.TextIOWrapper(stream, encoding="utf-8", newline="")
    reader = csv.reader(text)
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise SchemaError("CSV has no header row") from None
    wanted = {"open": schema.open, "high": schema.high, "low": schema.low, "close": schema.close}
    if schema.timestamp is not None:
        wanted["timestamp"] = schema.timestamp
    missing = [name for name in wanted.values() if name not in header]
    if missing:
        raise SchemaError(f"CSV is missing column(s) {missing}; header is {header}")
    col = {key: header.index(name) for key, name in wanted.items()}

    result = ParseResult()
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not cell.strip() for cell in row):
            continue
        try:
            o, h, l, c = (float(row[col[k]]) for k in ("open", "high", "low", "close"))
            ts = _parse_timestamp(row[col["timestamp"]]) if "timestamp" in col else None
            result.bars.append(OhlcBar(o, h, l, c, timestamp=ts))
        except (ValueError, IndexError, InvalidBarError) as exc:
            result.errors.append(RowError(lineno, str(exc)))
    return result


def slide_windows(bars: Sequence[OhlcBar], stride: int = WINDOW_LEN) -> list[Window]:
    if stride < 1:
        raise ValueError(f"stride must be positive, got {stride}")
    if len(bars) < WINDOW_LEN:
        raise EmptyInputError(f"need at least {WINDOW_LEN} bars, got {len(bars)}")
    return [Window.from_bars(bars[i : i + WINDOW_LEN]) for i in range(0, len(bars) - WINDOW_LEN + 1, stride)]


# ---------------------------------------------------------------------------
# Synthetic generator
# ---------------------------------------------------------------------------

DOWN_FAMILY = (Pattern.MORNING_STAR, Pattern.HAMMER, Pattern.INVERTED_HAMMER, Pattern.BULLISH_ENGULFING)
UP_FAMILY = (Pattern.EVENING_STAR, Pattern.HANGING_MAN, Pattern.SHOOTING_STAR, Pattern.BEARISH_ENGULFING)


@dataclass(frozen=True)
class GeneratorConfig:
    """Random-walk and template parameters, in log-return units per bar."""

    base_price_low: float = 0.8
    base_price_high: float = 1.6
    volatility: float = 0.002
    drift_low: float = 0.5  # |drift| / volatility for trending context
    drift_high: float = 1.5
    shadow_scale: float = 0.5  # shadow / volatility for plain bars
    gap_scale: float = 0.05  # open gap / mean trend body
    flat_fraction: float = 0.4  # share of label-0 windows built as pattern shapes over a detrended context
    max_retries: int = 1000

    def as_dict(self) -> dict:
        return asdict(self)


DEFAULT_GENERATOR = GeneratorConfig()


class _Builder:
    """Appends bars one at a time in absolute price units."""

    def __init__(self, rng: np.random.Generator, cfg: GeneratorConfig):
        self.rng = rng
        self.cfg = cfg
        self.rows: list[list[float]] = []

    @property
    def last_close(self) -> float:
        return self.rows[-1][3]

    def add(self, open_: float, close: float, upper: float, lower: float) -> None:
        self.rows.append([open_, max(open_, close) + upper, min(open_, close) - lower, close])

    def next_open(self, mean_body: float) -> float:
        return self.last_close + self.rng.normal(0.0, self.cfg.gap_scale * mean_body)


def _trend_bars(b: _Builder, direction: int) -> None:
    rng, cfg = b.rng, b.cfg
    price = rng.uniform(cfg.base_price_low, cfg.base_price_high)
    drift = direction * rng.uniform(cfg.drift_low, cfg.drift_high) * cfg.volatility
    rets = drift + rng.normal(0.0, cfg.volatility, TREND_BARS)
    if direction == 0:
        t = np.arange(TREND_BARS) - (TREND_BARS - 1) / 2
        path = np.cumsum(rets)
        rets = np.diff(np.concatenate([[0.0], path - t * np.dot(t, path) / np.dot(t, t)]))
    for r in rets:
        open_ = price
        close = open_ * math.exp(r)
        sh = np.abs(rng.normal(0.0, cfg.shadow_scale * cfg.volatility, 2)) * open_
        b.add(open_, close, sh[0], sh[1])
        price = close


def _mean_body(b: _Builder) -> float:
    return float(np.mean([abs(r[3] - r[0]) for r in b.rows[:TREND_BARS]]))


def _plain_bar(b: _Builder, mb: float) -> None:
    rng = b.rng
    open_ = b.next_open(mb)
    close = open_ + rng.normal(0.0, 1.2 * mb)
    sh = np.abs(rng.normal(0.0, 0.5 * mb, 2))
    b.add(open_, close, sh[0], sh[1])


def _tall_bar(b: _Builder, mb: float, sign: int, open_: Optional[float] = None, min_body: float = 0.0) -> None:
    rng = b.rng
    open_ = b.next_open(mb) if open_ is None else open_
    body = max(mb * rng.uniform(1.6, 3.0), min_body)
    up, lo = body * rng.uniform(0.0, 0.25, 2)
    b.add(open_, open_ + sign * body, up, lo)


def _small_bar(b: _Builder, mb: float, gap_sign: int) -> None:
    rng = b.rng
    open_ = b.last_close + gap_sign * mb * rng.uniform(0.0, 0.3)
    body = mb * rng.uniform(0.02, 0.25) * rng.choice([-1.0, 1.0])
    up, lo = mb * rng.uniform(0.2, 1.0, 2)
    b.add(open_, open_ + body, up, lo)


def _star(b: _Builder, mb: float, sign: int) -> None:
    # sign=+1 morning star (down then up), -1 evening star
    _tall_bar(b, mb, -sign)
    o8, c8 = b.rows[-1][0], b.rows[-1][3]
    _small_bar(b, mb, -sign)
    open10 = b.next_open(mb)
    mid8 = 0.5 * (o8 + c8)
    need = sign * (mid8 - open10) + b.rng.uniform(0.1, 0.6) * abs(c8 - o8)
    _tall_bar(b, mb, sign, open_=open10, min_body=need)


def _hammer_shape(b: _Builder, mb: float, long_lower: bool) -> None:
    rng = b.rng
    open_ = b.next_open(mb)
    body = mb * rng.uniform(0.3, 1.2)
    close = open_ + body * rng.choice([-1.0, 1.0])
    long_ = body * rng.uniform(2.2, 4.0)
    tiny = body * rng.uniform(0.0, 0.2)
    if long_lower:
        b.add(open_, close, tiny, long_)
    else:
        b.add(open_, close, long_, tiny)


def _engulfing(b: _Builder, mb: float, sign: int) -> None:
    # sign=+1 bullish: black bar engulfed by white bar
    rng = b.rng
    open9 = b.next_open(mb)
    body9 = mb * rng.uniform(0.3, 1.0)
    close9 = open9 - sign * body9
    sh9 = body9 * rng.uniform(0.0, 0.3, 2)
    b.add(open9, close9, sh9[0], sh9[1])
    open10 = close9 - sign * body9 * rng.uniform(0.0, 0.3)
    close10 = open9 + sign * body9 * rng.uniform(0.1, 1.0)
    sh10 = abs(close10 - open10) * rng.uniform(0.0, 0.25, 2)
    b.add(open10, close10, sh10[0], sh10[1])


def _pattern_tail(b: _Builder, shape: Pattern) -> None:
    mb = _mean_body(b)
    if shape in (Pattern.MORNING_STAR, Pattern.EVENING_STAR):
        _star(b, mb, 1 if shape == Pattern.MORNING_STAR else -1)
        return
    if shape in (Pattern.BULLISH_ENGULFING, Pattern.BEARISH_ENGULFING):
        _plain_bar(b, mb)
        _engulfing(b, mb, 1 if shape == Pattern.BULLISH_ENGULFING else -1)
        return
    _plain_bar(b, mb)
    _plain_bar(b, mb)
    _hammer_shape(b, mb, long_lower=shape in (Pattern.HAMMER, Pattern.HANGING_MAN))


def _candidate(rng: np.random.Generator, target: Pattern, cfg: GeneratorConfig) -> Optional[Window]:
    b = _Builder(rng, cfg)
    if target == Pattern.NONE:
        if rng.random() < cfg.flat_fraction:
            _trend_bars(b, 0)
            _pattern_tail(b, Pattern(int(rng.integers(1, NUM_LABELS))))
        else:
            _trend_bars(b, int(rng.integers(-1, 2)))
            mb = _mean_body(b)
            for _ in range(3):
                _plain_bar(b, mb)
    else:
        _trend_bars(b, -1 if target in DOWN_FAMILY else 1)
        _pattern_tail(b, target)
    try:
        return Window(np.array(b.rows))
    except InvalidBarError:
        return None


def synthesize_window(
    rng: np.random.Generator,
    target: int,
    params: GeneratorConfig = DEFAULT_GENERATOR,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> LabeledWindow:
    """Draw windows until the rule oracle assigns ``target``."""
    if not 0 <= int(target) < NUM_LABELS:
        raise ValueError(f"target label must be in 0..{NUM_LABELS - 1}, got {target}")
    target = Pattern(int(target))
    for _ in range(params.max_retries):
        w = _candidate(rng, target, params)
        if w is not None and detect_pattern(w, thresholds) == target:
            return LabeledWindow(w, int(target))
    raise GenerationError(f"could not synthesize label {int(target)} ({target.name}) in {params.max_retries} tries")


# ---------------------------------------------------------------------------
# Datasets
# ---------------------------------------------------------------------------


@dataclass
class Dataset:
    """Labeled windows stored column-wise: ``prices`` is ``(N, 10, 4)``."""

    prices: np.ndarray
    labels: np.ndarray
    ids: np.ndarray
    split_tag: str = "all"
    seed: int = 0
    meta: dict = field(default_factory=dict)
    timestamps: Optional[np.ndarray] = None

    def __post_init__(self) -> None:
        self.prices = np.asarray(self.prices, dtype=np.float64).reshape(-1, WINDOW_LEN, 4)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.ids = np.asarray(self.ids, dtype=np.int64)
        if not len(self.prices) == len(self.labels) == len(self.ids):
            raise ValueError("prices, labels and ids must have equal length")

    def __len__(self) -> int:
        return len(self.labels)

    @classmethod
    def from_samples(cls, samples: Sequence[LabeledWindow], **kw) -> Dataset:
        prices = np.array([s.window.prices for s in samples]).reshape(-1, WINDOW_LEN, 4)
        labels = np.array([s.label for s in samples], dtype=np.int64)
        ids = kw.pop("ids", np.arange(len(samples)))
        return cls(prices, labels, ids, **kw)

    @property
    def samples(self) -> list[LabeledWindow]:
        return [LabeledWindow(self.window(i), int(self.labels[i])) for i in range(len(self))]

    def window(self, i: int) -> Window:
        ts = None if self.timestamps is None else tuple(int(t) for t in self.timestamps[i])
        return Window(self.prices[i], ts)

    def class_counts(self) -> dict[int, int]:
        return {k: int(np.sum(self.labels == k)) for k in range(NUM_LABELS)}

    def subset(self, index: np.ndarray, split_tag: Optional[str] = None) -> Dataset:
        index = np.asarray(index, dtype=np.int64)
        return Dataset(
            self.prices[index],
            self.labels[index],
            self.ids[index],
            split_tag=self.split_tag if split_tag is None else split_tag,
            seed=self.seed,
            meta=dict(self.meta),
            timestamps=None if self.timestamps is None else self.timestamps[index],
        )


def class_targets(per_label: int, none_multiplier: int = 2) -> dict[int, int]:
    """Per-class counts; the "none" class gets ``none_multiplier`` times as many."""
    counts = {k: per_label for k in range(1, NUM_LABELS)}
    counts[0] = per_label * none_multiplier
    return dict(sorted(counts.items()))


def generate_dataset(
    counts: dict[int, int],
    seed: int,
    params: GeneratorConfig = DEFAULT_GENERATOR,
    thresholds: Thresholds = DEFAULT_THRESHOLDS,
) -> Dataset:
    """Each sample draws from its own stream keyed by (seed, label, index), so order and
    worker layout never change the result."""
    prices, labels = [], []
    for label in sorted(counts):
        for i in range(counts[label]):
            rng = np.random.default_rng([seed, label, i])
            s = synthesize_window(rng, label, params, thresholds)
            prices.append(s.window.prices)
            labels.append(label)
    meta = {"generator": params.as_dict(), "thresholds": thresholds.as_dict(), "counts": {str(k): v for k, v in counts.items()}}
    n = len(labels)
    return Dataset(np.array(prices).reshape(n, WINDOW_LEN, 4), np.array(labels), np.arange(n), seed=seed, meta=meta)


def label_windows(windows: Iterable[Window], thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Dataset:
    windows = list(windows)
    labels = [int(detect_pattern(w, thresholds)) for w in windows]
    ds = Dataset.from_samples([LabeledWindow(w, lab) for w, lab in zip(windows, labels)])
    if windows and all(w.timestamps is not None for w in windows):
        ds.timestamps = np.array([w.timestamps for w in windows], dtype=np.int64)
    ds.meta = {"thresholds": thresholds.as_dict()}
    return ds


def split(dataset: Dataset, train_fraction: float, seed: int) -> tuple[Dataset, Dataset]:
    """Stratified, seeded train/test partition."""
    if not 0.0 < train_fraction < 1.0:
        raise ValueError(f"train_fraction must be in (0, 1), got {train_fraction}")
    rng = np.random.default_rng(seed)
    train_idx, test_idx = [], []
    for label in np.unique(dataset.labels):
        idx = np.flatnonzero(dataset.labels == label)
        if len(idx) < 2:
            raise StratificationError(f"label {label} has {len(idx)} sample(s); need at least 2 to stratify")
        idx = rng.permutation(idx)
        k = min(max(int(round(train_fraction * len(idx))), 1), len(idx) - 1)
        train_idx.append(idx[:k])
        test_idx.append(idx[k:])
    tr = np.sort(np.concatenate(train_idx))
    te = np.sort(np.concatenate(test_idx))
    return dataset.subset(tr, "train"), dataset.subset(te, "test")


# ---------------------------------------------------------------------------
# GAFL1 container
# ---------------------------------------------------------------------------


def _record_dtype(has_timestamps: bool) -> np.dtype:
    fields = [("id", "<i8"), ("prices", "<f8", (WINDOW_LEN * 4,)), ("label", "u1")]
    if has_timestamps:
        fields.append(("timestamps", "<i8", (WINDOW_LEN,)))
    return np.dtype(fields)


def canonical_json(obj) -> bytes:
    return json.dumps(obj, sort_keys=True, separators=(",", ":"), allow_nan=False).encode("utf-8")


def dataset_to_bytes(ds: Dataset) -> bytes:
    has_ts = ds.timestamps is not None
    header = {
        "version": 1,
        "split": ds.split_tag,
        "seed": int(ds.seed),
        "count": len(ds),
        "class_counts": {str(k): v for k, v in ds.class_counts().items()},
        "has_timestamps": has_ts,
        "channel_order": ["open", "high", "low", "close"],
        "meta": ds.meta,
    }
    head = canonical_json(header)
    rec = np.zeros(len(ds), dtype=_record_dtype(has_ts))
    rec["id"] = ds.ids
    rec["prices"] = ds.prices.reshape(len(ds), -1)
    rec["label"] = ds.labels
    if has_ts:
        rec["timestamps"] = ds.timestamps
    return DATASET_MAGIC + struct.pack("<I", len(head)) + head + rec.tobytes()


def dataset_from_bytes(blob: bytes) -> Dataset:
    if blob[: len(DATASET_MAGIC)] != DATASET_MAGIC:
        raise DatasetFormatError(f"bad magic string {blob[:5]!r}: expected {DATASET_MAGIC!r} (not a dataset file)")
    try:
        (hlen,) = struct.unpack_from("<I", blob, 5)
        header = json.loads(blob[9 : 9 + hlen].decode("utf-8"))
        dtype = _record_dtype(bool(header["has_timestamps"]))
        body = blob[9 + hlen :]
        if len(body) != header["count"] * dtype.itemsize:
            raise DatasetFormatError(f"dataset body has {len(body)} bytes, expected {header['count'] * dtype.itemsize}")
        rec = np.frombuffer(body, dtype=dtype)
    except (struct.error, UnicodeDecodeError, json.JSONDecodeError, KeyError) as exc:
        raise DatasetFormatError(f"corrupt dataset header: {exc}") from exc
    return Dataset(
        rec["prices"].reshape(-1, WINDOW_LEN, 4).astype(np.float64),
        rec["label"].astype(np.int64),
        rec["id"].astype(np.int64),
        split_tag=header["split"],
        seed=header["seed"],
        meta=header["meta"],
        timestamps=rec["timestamps"].astype(np.int64) if header["has_timestamps"] else None,
    )


def save_dataset(ds: Dataset, path: str | Path) -> None:
    Path(path).write_bytes(dataset_to_bytes(ds))


def load_dataset(path: str | Path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())
