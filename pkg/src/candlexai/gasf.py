"""Gramian Angular Summation Field codec for OHLC windows.

Prices are jointly min-max scaled into [0, 1] (one record for all four
channels), mapped to angles ``phi = arccos(x)`` and imaged as
``G[i, j] = cos(phi_i + phi_j)``. Because ``x`` lives in [0, 1] the angle
lies in [0, pi/2] and the diagonal ``2 x**2 - 1`` inverts uniquely.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHANNELS = ("open", "high", "low", "close")
DOMAIN_TOL = 1e-12

_TENSOR_MAGIC = b"GASF1"


class DomainError(ValueError):
    """Input outside the domain of the codec."""


class DegenerateWindowError(ValueError):
    """A flat window has no scale to invert."""


@dataclass(frozen=True)
class NormRecord:
    min_price: float
    max_price: float
    degenerate: bool = False

    @property
    def span(self) -> float:
        return self.max_price - self.min_price


@dataclass(frozen=True)
class NormalizedSeries:
    """Normalized prices, shape ``(4, T)`` in channel order open/high/low/close."""

    values: np.ndarray
    norm: NormRecord


@dataclass(frozen=True)
class PolarSeries:
    angles: np.ndarray
    radii: np.ndarray


@dataclass(frozen=True)
class GasfTensor:
    """Per-channel GASF matrices, shape ``(4, T, T)``."""

    matrices: np.ndarray
    norm: NormRecord = field(default_factory=lambda: NormRecord(0.0, 1.0))

    @property
    def diagonals(self) -> np.ndarray:
        return np.diagonal(self.matrices, axis1=1, axis2=2).copy()

    def as_input(self) -> np.ndarray:
        """Channels-last view ``(T, T, 4)`` as consumed by the classifier."""
        return np.ascontiguousarray(self.matrices.transpose(1, 2, 0))

    def with_matrices(self, matrices: np.ndarray) -> GasfTensor:
        return GasfTensor(matrices, self.norm)


def normalize(prices: np.ndarray) -> NormalizedSeries:
    """Joint min-max scaling of a ``(T, 4)`` OHLC array to ``(4, T)`` in [0, 1].

    A flat window (max == min) maps to 0.5 everywhere and is flagged degenerate.
    """
    prices = np.asarray(prices, dtype=np.float64)
    lo = float(prices.min())
    hi = float(prices.max())
    if hi == lo:
        values = np.full(prices.T.shape, 0.5)
        return NormalizedSeries(values, NormRecord(lo, hi, degenerate=True))
    values = (prices.T - lo) / (hi - lo)
    return NormalizedSeries(np.clip(values, 0.0, 1.0), NormRecord(lo, hi))


def denormalize(series: NormalizedSeries, repair: bool = True) -> np.ndarray:
    """Inverse of :func:`normalize`; returns a ``(T, 4)`` OHLC price array.

    With ``repair`` the high/low of each bar are widened to cover open and close,
    so perturbed series still render as valid candles.
    """
    if series.norm.degenerate or series.norm.span <= 0:
        raise DegenerateWindowError("cannot denormalize a degenerate window; render the original")
    prices = (np.asarray(series.values).T * series.norm.span + series.norm.min_price).copy()
    if repair:
        prices = repair_ohlc(prices)
    return prices


def repair_ohlc(prices: np.ndarray) -> np.ndarray:
    out = np.array(prices, dtype=np.float64, copy=True)
    out[:, 1] = out.max(axis=1)
    out[:, 2] = out.min(axis=1)
    return out


def to_polar(values: np.ndarray) -> PolarSeries:
    """Angles and radii for a 1-D normalized series; radii ``t_i / N`` are kept but unused."""
    values = _check_unit(np.asarray(values, dtype=np.float64))
    n = values.shape[-1]
    return PolarSeries(np.arccos(values), np.arange(1, n + 1) / n)


def _check_unit(values: np.ndarray) -> np.ndarray:
    if values.size and (values.min() < -DOMAIN_TOL or values.max() > 1 + DOMAIN_TOL):
        raise DomainError(f"normalized values must lie in [0, 1], got range [{values.min()}, {values.max()}]")
    return np.clip(values, 0.0, 1.0)


def gasf_matrix(values: np.ndarray) -> np.ndarray:
    """Trigonometric form ``cos(phi_i + phi_j)`` over the last axis.

    Accepts a single series ``(T,)`` or a stack ``(..., T)``.
    """
    phi = np.arccos(_check_unit(np.asarray(values, dtype=np.float64)))
    # float addition commutes, so the result is exactly symmetric
    return np.cos(phi[..., :, None] + phi[..., None, :])


def gasf_matrix_product(values: np.ndarray) -> np.ndarray:
    """Product form ``x x^T - sqrt(1 - x^2) sqrt(1 - x^2)^T``."""
    x = _check_unit(np.asarray(values, dtype=np.float64))
    s = np.sqrt(np.clip(1.0 - x * x, 0.0, None))
    return x[..., :, None] * x[..., None, :] - s[..., :, None] * s[..., None, :]


def encode(series: NormalizedSeries) -> GasfTensor:
    return GasfTensor(gasf_matrix(series.values), series.norm)


def encode_window(prices: np.ndarray) -> GasfTensor:
    return encode(normalize(prices))


def decode_diagonal(diag: np.ndarray) -> np.ndarray:
    """Recover normalized values from GASF diagonal entries ``d = 2 x**2 - 1``."""
    d = np.asarray(diag, dtype=np.float64)
    if d.size and (d.min() < -1 - DOMAIN_TOL or d.max() > 1 + DOMAIN_TOL):
        raise DomainError(f"diagonal entries must lie in [-1, 1], got range [{d.min()}, {d.max()}]")
    return np.cos(np.arccos(np.clip(d, -1.0, 1.0)) / 2.0)


def decode(tensor: GasfTensor) -> NormalizedSeries:
    return NormalizedSeries(decode_diagonal(tensor.diagonals), tensor.norm)


def reencode(tensor: GasfTensor) -> GasfTensor:
    """Rebuild a self-consistent GASF from the diagonal alone."""
    return GasfTensor(gasf_matrix(decode_diagonal(tensor.diagonals)), tensor.norm)


def save_tensor(tensor: GasfTensor, path: str | Path) -> None:
    Path(path).write_bytes(tensor_to_bytes(tensor))


def load_tensor(path: str | Path) -> GasfTensor:
    return tensor_from_bytes(Path(path).read_bytes())


def tensor_to_bytes(tensor: GasfTensor) -> bytes:
    m = np.ascontiguousarray(tensor.matrices, dtype="<f8")
    c, n, n2 = m.shape
    if n != n2:
        raise ValueError("GASF matrices must be square")
    head = _TENSOR_MAGIC + struct.pack("<II", c, n)
    tail = struct.pack("<ddB", tensor.norm.min_price, tensor.norm.max_price, int(tensor.norm.degenerate))
    return head + m.tobytes() + tail


def tensor_from_bytes(blob: bytes) -> GasfTensor:
    if blob[:5] != _TENSOR_MAGIC:
        raise ValueError(f"bad GASF tensor magic {blob[:5]!r}, expected {_TENSOR_MAGIC!r}")
    c, n = struct.unpack_from("<II", blob, 5)
    offset = 13
    size = c * n * n * 8
    expected = offset + size + 17
    if len(blob) != expected:
        raise ValueError(f"GASF tensor file has {len(blob)} bytes, expected {expected}")
    m = np.frombuffer(blob, dtype="<f8", count=c * n * n, offset=offset).reshape(c, n, n).astype(np.float64)
    lo, hi, deg = struct.unpack_from("<ddB", blob, offset + size)
    return GasfTensor(m, NormRecord(lo, hi, bool(deg)))


def encode_prices_batch(prices: np.ndarray) -> np.ndarray:
    """Encode ``(N, T, 4)`` OHLC windows to classifier inputs ``(N, T, T, 4)``.

    Same joint normalization as :func:`normalize`, vectorized over windows.
    """
    prices = np.asarray(prices, dtype=np.float64)
    lo = prices.min(axis=(1, 2), keepdims=True)
    hi = prices.max(axis=(1, 2), keepdims=True)
    span = hi - lo
    flat = span == 0
    values = np.where(flat, 0.5, (prices - lo) / np.where(flat, 1.0, span))
    values = np.clip(values.transpose(0, 2, 1), 0.0, 1.0)  # (N, 4, T)
    return np.ascontiguousarray(gasf_matrix(values).transpose(0, 2, 3, 1))
