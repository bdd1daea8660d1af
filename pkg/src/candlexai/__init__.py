"""Explaining a GASF candlestick classifier with a diagonal local-search attack."""

from .bars import OhlcBar, Window
from .patterns import Pattern, detect_pattern

__all__ = ["OhlcBar", "Window", "Pattern", "detect_pattern"]
__version__ = "0.1.0"
