"""Rule oracle for the eight candlestick patterns on a 10-bar window.

Bars 1-7 give the trend context, bars 8-10 carry the pattern. Single-bar
patterns look at bar 10, engulfing patterns at bars 9-10 and star patterns
at bars 8-10. Every rule is a ratio or ordering test, so labels do not
change when all prices are scaled by a positive constant.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from enum import IntEnum

import numpy as np

from .bars import TREND_BARS, OhlcBar, Window


class Pattern(IntEnum):
    NONE = 0
    MORNING_STAR = 1
    EVENING_STAR = 2
    HAMMER = 3
    INVERTED_HAMMER = 4
    BULLISH_ENGULFING = 5
    BEARISH_ENGULFING = 6
    SHOOTING_STAR = 7
    HANGING_MAN = 8


NUM_LABELS = len(Pattern)

# longer evidence wins; inside a tier the lowest code wins
PRIORITY = (
    Pattern.MORNING_STAR,
    Pattern.EVENING_STAR,
    Pattern.BULLISH_ENGULFING,
    Pattern.BEARISH_ENGULFING,
    Pattern.HAMMER,
    Pattern.INVERTED_HAMMER,
    Pattern.SHOOTING_STAR,
    Pattern.HANGING_MAN,
)

DOJI_REL_TOL = 1e-9


@dataclass(frozen=True)
class Thresholds:
    tall_body_frac: float = 0.6  # tall: body / (high - low) of the bar
    tall_body_mult: float = 1.2  # tall: body / mean trend body
    small_body_frac: float = 0.3  # small: body / mean trend body
    tiny_shadow_frac: float = 0.25  # "little or no" shadow: shadow / body
    long_shadow_mult: float = 2.0  # long shadow: shadow / body
    trend_slope_frac: float = 0.02  # per-bar slope / window price range

    def as_dict(self) -> dict[str, float]:
        return asdict(self)


DEFAULT_THRESHOLDS = Thresholds()


@dataclass(frozen=True)
class BarAnatomy:
    body: float
    upper_shadow: float
    lower_shadow: float
    direction: str  # "white" | "black" | "doji"

    @property
    def white(self) -> bool:
        return self.direction == "white"

    @property
    def black(self) -> bool:
        return self.direction == "black"


@dataclass(frozen=True)
class TrendContext:
    slope: float
    direction: str  # "up" | "down" | "flat"


def anatomy(bar: OhlcBar | np.ndarray) -> BarAnatomy:
    o, h, l, c = bar.as_tuple() if isinstance(bar, OhlcBar) else (float(v) for v in bar)
    body = abs(c - o)
    if body <= DOJI_REL_TOL * abs(c):
        direction = "doji"
    else:
        direction = "white" if c > o else "black"
    return BarAnatomy(body, h - max(o, c), min(o, c) - l, direction)


def trend(window: Window, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> TrendContext:
    p = window.prices
    closes = p[:TREND_BARS, 3]
    t = np.arange(TREND_BARS, dtype=np.float64)
    tc = t - t.mean()
    slope = float(np.dot(tc, closes - closes.mean()) / np.dot(tc, tc))
    price_range = float(p[:, 1].max() - p[:, 2].min())
    limit = thresholds.trend_slope_frac * price_range
    if slope > limit:
        direction = "up"
    elif slope < -limit:
        direction = "down"
    else:
        direction = "flat"
    return TrendContext(slope, direction)


class _Rules:
    """Evaluates each detector once against a precomputed window summary."""

    def __init__(self, window: Window, th: Thresholds):
        p = window.prices
        self.th = th
        self.p = p
        self.trend = trend(window, th).direction
        self.mean_body = float(np.mean(np.abs(p[:TREND_BARS, 3] - p[:TREND_BARS, 0])))
        self.a8, self.a9, self.a10 = (anatomy(p[i]) for i in (7, 8, 9))

    def tall(self, i: int, a: BarAnatomy) -> bool:
        span = self.p[i, 1] - self.p[i, 2]
        return (
            a.direction != "doji"
            and a.body >= self.th.tall_body_frac * span
            and a.body >= self.th.tall_body_mult * self.mean_body
        )

    def small(self, a: BarAnatomy) -> bool:
        return a.body <= self.th.small_body_frac * self.mean_body

    def body_mid(self, i: int) -> float:
        return 0.5 * (self.p[i, 0] + self.p[i, 3])

    def morning_star(self) -> bool:
        return (
            self.trend == "down"
            and self.a8.black and self.tall(7, self.a8)
            and self.small(self.a9)
            and self.a10.white and self.tall(9, self.a10)
            and self.p[9, 3] > self.body_mid(7)
        )

    def evening_star(self) -> bool:
        return (
            self.trend == "up"
            and self.a8.white and self.tall(7, self.a8)
            and self.small(self.a9)
            and self.a10.black and self.tall(9, self.a10)
            and self.p[9, 3] < self.body_mid(7)
        )

    def _lower_hammer_shape(self) -> bool:
        a = self.a10
        return (
            a.direction != "doji"
            and a.lower_shadow >= self.th.long_shadow_mult * a.body
            and a.upper_shadow <= self.th.tiny_shadow_frac * a.body
        )

    def _upper_hammer_shape(self) -> bool:
        a = self.a10
        return (
            a.direction != "doji"
            and a.upper_shadow >= self.th.long_shadow_mult * a.body
            and a.lower_shadow <= self.th.tiny_shadow_frac * a.body
        )

    def hammer(self) -> bool:
        return self.trend == "down" and self._lower_hammer_shape()

    def hanging_man(self) -> bool:
        return self.trend == "up" and self._lower_hammer_shape()

    def inverted_hammer(self) -> bool:
        return self.trend == "down" and self._upper_hammer_shape()

    def shooting_star(self) -> bool:
        return self.trend == "up" and self._upper_hammer_shape()

    def bullish_engulfing(self) -> bool:
        o9, c9 = self.p[8, 0], self.p[8, 3]
        o10, c10 = self.p[9, 0], self.p[9, 3]
        return (
            self.trend == "down"
            and self.a9.black and self.a10.white
            and o10 <= c9 and c10 >= o9
            and self.a10.body > self.a9.body
        )

    def bearish_engulfing(self) -> bool:
        o9, c9 = self.p[8, 0], self.p[8, 3]
        o10, c10 = self.p[9, 0], self.p[9, 3]
        return (
            self.trend == "up"
            and self.a9.white and self.a10.black
            and o10 >= c9 and c10 <= o9
            and self.a10.body > self.a9.body
        )


_DETECTORS = {
    Pattern.MORNING_STAR: _Rules.morning_star,
    Pattern.EVENING_STAR: _Rules.evening_star,
    Pattern.HAMMER: _Rules.hammer,
    Pattern.INVERTED_HAMMER: _Rules.inverted_hammer,
    Pattern.BULLISH_ENGULFING: _Rules.bullish_engulfing,
    Pattern.BEARISH_ENGULFING: _Rules.bearish_engulfing,
    Pattern.SHOOTING_STAR: _Rules.shooting_star,
    Pattern.HANGING_MAN: _Rules.hanging_man,
}


def raw_matches(window: Window, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> list[Pattern]:
    """Every detector that fires, before priority resolution."""
    rules = _Rules(window, thresholds)
    return [label for label, rule in _DETECTORS.items() if rule(rules)]


def detect_pattern(window: Window, thresholds: Thresholds = DEFAULT_THRESHOLDS) -> Pattern:
    fired = set(raw_matches(window, thresholds))
    for label in PRIORITY:
        if label in fired:
            return label
    return Pattern.NONE
