"""Deterministic SVG output: candlestick charts, GASF heatmaps and before/after figures."""
from __future__ import annotations

import json
from typing import Optional, Sequence, Union
from xml.sax.saxutils import escape

import numpy as np

from .bars import Window
from .gasf import CHANNELS, GasfTensor
from .patterns import DOJI_REL_TOL, Pattern

PANEL_W, PANEL_H = 320, 240
PAD = 24
NEG = (33, 102, 172)
MID = (247, 247, 247)
POS = (178, 24, 43)


class UsageError(ValueError):
    pass


def _num(v: float) -> str:
    return f"{v:.3f}".rstrip("0").rstrip(".")


def diverging_color(v: float) -> str:
    """Blue at -1, near-white at 0, red at +1."""
    v = float(np.clip(v, -1.0, 1.0))
    a, b, t = (MID, POS, v) if v >= 0 else (MID, NEG, -v)
    rgb = tuple(int(round(a[k] + (b[k] - a[k]) * t)) for k in range(3))
    return "#%02x%02x%02x" % rgb


def _document(width: int, height: int, body: list[str], provenance: Optional[dict]) -> str:
    head = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}">',
    ]
    if provenance is not None:
        head.append(f"<metadata>{escape(json.dumps(provenance, sort_keys=True))}</metadata>")
    head.append(f'<rect x="0" y="0" width="{width}" height="{height}" fill="#ffffff"/>')
    return "\n".join(head + body + ["</svg>"]) + "\n"


def _annotation(label: Optional[int], confidence: Optional[float], title: Optional[str]) -> list[str]:
    parts = []
    if title:
        parts.append(title)
    if label is not None:
        parts.append(f"{Pattern(label).name.lower().replace('_', ' ')} ({label})")
    if confidence is not None:
        parts.append(f"p={confidence:.3f}")
    if not parts:
        return []
    return [f'<text class="annotation" x="{PAD}" y="{PAD - 8}" font-family="sans-serif" font-size="11">{escape(" | ".join(parts))}</text>']


def candle_panel(
    window: Window,
    label: Optional[int] = None,
    confidence: Optional[float] = None,
    title: Optional[str] = None,
) -> list[str]:
    p = window.prices
    lo, hi = float(p[:, 2].min()), float(p[:, 1].max())
    margin = 0.05 * (hi - lo) if hi > lo else 0.05 * abs(hi) or 1.0
    lo, hi = lo - margin, hi + margin
    plot_h = PANEL_H - 2 * PAD
    slot = (PANEL_W - 2 * PAD) / len(p)

    def y(price: float) -> float:
        return PAD + (hi - price) / (hi - lo) * plot_h

    out = _annotation(label, confidence, title)
    out.append(f'<rect class="frame" x="{PAD}" y="{PAD}" width="{PANEL_W - 2 * PAD}" height="{plot_h}" fill="none" stroke="#cccccc"/>')
    for i, (o, h, l, c) in enumerate(p):  # oldest on the left
        cx = PAD + (i + 0.5) * slot
        bw = slot * 0.6
        out.append(f'<line class="wick" x1="{_num(cx)}" y1="{_num(y(h))}" x2="{_num(cx)}" y2="{_num(y(l))}" stroke="#000000"/>')
        if abs(c - o) <= DOJI_REL_TOL * abs(c):
            out.append(
                f'<line class="body doji" x1="{_num(cx - bw / 2)}" y1="{_num(y(c))}" '
                f'x2="{_num(cx + bw / 2)}" y2="{_num(y(c))}" stroke="#000000" stroke-width="2"/>'
            )
            continue
        white = c > o
        top, bottom = y(max(o, c)), y(min(o, c))
        out.append(
            f'<rect class="body {"white" if white else "black"}" x="{_num(cx - bw / 2)}" y="{_num(top)}" '
            f'width="{_num(bw)}" height="{_num(bottom - top)}" '
            f'fill="{"#ffffff" if white else "#000000"}" stroke="#000000"/>'
        )
    return out


def render_candles(
    window: Window,
    label: Optional[int] = None,
    confidence: Optional[float] = None,
    title: Optional[str] = None,
    provenance: Optional[dict] = None,
) -> str:
    return _document(PANEL_W, PANEL_H, candle_panel(window, label, confidence, title), provenance)


def _channel_index(channel: Union[int, str]) -> int:
    if isinstance(channel, str):
        if channel not in CHANNELS:
            raise UsageError(f"unknown channel {channel!r}; choose one of {CHANNELS}")
        return CHANNELS.index(channel)
    if not 0 <= int(channel) < len(CHANNELS):
        raise UsageError(f"channel index must be 0..{len(CHANNELS) - 1}, got {channel}")
    return int(channel)


def gasf_panel(
    tensor: GasfTensor,
    channel: Union[int, str] = "close",
    label: Optional[int] = None,
    confidence: Optional[float] = None,
    title: Optional[str] = None,
) -> list[str]:
    m = tensor.matrices[_channel_index(channel)]
    n = m.shape[0]
    cell = (min(PANEL_W, PANEL_H) - 2 * PAD) / n
    out = _annotation(label, confidence, title)
    for i in range(n):
        for j in range(n):
            out.append(
                f'<rect class="cell" data-i="{i}" data-j="{j}" data-value="{m[i, j]!r}" '
                f'x="{_num(PAD + j * cell)}" y="{_num(PAD + i * cell)}" width="{_num(cell)}" height="{_num(cell)}" '
                f'fill="{diverging_color(m[i, j])}"/>'
            )
    for i in range(n):  # attack region
        out.append(
            f'<rect class="diagonal" x="{_num(PAD + i * cell)}" y="{_num(PAD + i * cell)}" '
            f'width="{_num(cell)}" height="{_num(cell)}" fill="none" stroke="#000000" stroke-width="1.5"/>'
        )
    return out


def render_gasf(
    tensor: GasfTensor,
    channel: Union[int, str] = "close",
    label: Optional[int] = None,
    confidence: Optional[float] = None,
    title: Optional[str] = None,
    provenance: Optional[dict] = None,
) -> str:
    return _document(PANEL_W, PANEL_H, gasf_panel(tensor, channel, label, confidence, title), provenance)


def side_by_side(panels: Sequence[list[str]], provenance: Optional[dict] = None) -> str:
    body = []
    for k, panel in enumerate(panels):
        body.append(f'<g class="panel" transform="translate({k * PANEL_W},0)">')
        body.extend(panel)
        body.append("</g>")
    return _document(PANEL_W * len(panels), PANEL_H, body, provenance)
