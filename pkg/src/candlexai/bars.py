"""Candlestick value types shared by every module."""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable, Optional, Sequence

import numpy as np

WINDOW_LEN = 10
TREND_BARS = 7


class InvalidBarError(ValueError):
    pass


@dataclass(frozen=True)
class OhlcBar:
    open: float
    high: float
    low: float
    close: float
    timestamp: Optional[int] = None

    def __post_init__(self) -> None:
        prices = (self.open, self.high, self.low, self.close)
        if not all(math.isfinite(p) and p > 0 for p in prices):
            raise InvalidBarError(f"prices must be finite and positive: {prices}")
        if self.low > min(self.open, self.close) or self.high < max(self.open, self.close):
            raise InvalidBarError(
                f"OHLC ordering violated: open={self.open} high={self.high} low={self.low} close={self.close}"
            )

    def as_tuple(self) -> tuple[float, float, float, float]:
        return (self.open, self.high, self.low, self.close)


@dataclass(frozen=True, eq=False)
class Window:
    """Ten bars, oldest first, held as a ``(10, 4)`` float64 array (open, high, low, close)."""

    prices: np.ndarray
    timestamps: Optional[tuple[int, ...]] = None

    def __post_init__(self) -> None:
        arr = np.array(self.prices, dtype=np.float64)
        if arr.shape != (WINDOW_LEN, 4):
            raise InvalidBarError(f"window must have shape ({WINDOW_LEN}, 4), got {arr.shape}")
        if not np.all(np.isfinite(arr)) or np.any(arr <= 0):
            raise InvalidBarError("window prices must be finite and positive")
        o, h, l, c = arr.T
        if np.any(l > np.minimum(o, c)) or np.any(h < np.maximum(o, c)):
            raise InvalidBarError("OHLC ordering violated inside window")
        arr.setflags(write=False)
        object.__setattr__(self, "prices", arr)

    @classmethod
    def from_bars(cls, bars: Sequence[OhlcBar]) -> Window:
        ts = tuple(b.timestamp for b in bars)
        return cls(
            np.array([b.as_tuple() for b in bars], dtype=np.float64),
            None if any(t is None for t in ts) else ts,  # type: ignore[arg-type]
        )

    @property
    def bars(self) -> list[OhlcBar]:
        ts: Iterable = self.timestamps or [None] * WINDOW_LEN
        return [OhlcBar(*map(float, row), timestamp=t) for row, t in zip(self.prices, ts)]

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, Window):
            return NotImplemented
        return np.array_equal(self.prices, other.prices) and self.timestamps == other.timestamps

    def __hash__(self) -> int:
        return hash(self.prices.tobytes())

    def scaled(self, k: float) -> Window:
        return Window(self.prices * k, self.timestamps)

    def shifted(self, c: float) -> Window:
        return Window(self.prices + c, self.timestamps)
