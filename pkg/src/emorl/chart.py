"""Minimal standalone SVG line chart for per-epoch training loss."""

from __future__ import annotations

import math
from pathlib import Path
from typing import Sequence
from xml.sax.saxutils import escape

WIDTH, HEIGHT = 640, 400
LEFT, RIGHT, TOP, BOTTOM = 70, 20, 40, 50
N_TICKS = 5


def _ticks(lo: float, hi: float) -> list[float]:
    if hi == lo:
        return [lo]
    return [lo + (hi - lo) * i / (N_TICKS - 1) for i in range(N_TICKS)]


def _span(lo: float, hi: float) -> tuple[float, float]:
    if hi > lo:
        return lo, hi
    pad = abs(lo) * 0.1 or 1.0
    return lo - pad, hi + pad


def loss_chart_svg(epochs: Sequence[int], losses: Sequence[float], title: str = "Training loss") -> str:
    """SVG text for loss vs epoch; non-finite losses are left out of the line."""
    pts = [(float(e), float(l)) for e, l in zip(epochs, losses) if math.isfinite(l)]
    skipped = len(losses) - len(pts)
    pw, ph = WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM

    if pts:
        x_lo, x_hi = _span(min(p[0] for p in pts), max(p[0] for p in pts))
        y_lo, y_hi = _span(min(p[1] for p in pts), max(p[1] for p in pts))
    else:
        x_lo, x_hi, y_lo, y_hi = 0.0, 1.0, 0.0, 1.0

    def sx(x: float) -> float:
        return LEFT + (x - x_lo) / (x_hi - x_lo) * pw

    def sy(y: float) -> float:
        return TOP + ph - (y - y_lo) / (y_hi - y_lo) * ph

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">',
        f'<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        f'<text x="{WIDTH / 2:.1f}" y="22" text-anchor="middle" font-size="15">{escape(title)}</text>',
        f'<line x1="{LEFT}" y1="{TOP + ph}" x2="{LEFT + pw}" y2="{TOP + ph}" stroke="black"/>',
        f'<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{TOP + ph}" stroke="black"/>',
    ]
    for x in _ticks(x_lo, x_hi):
        px = sx(x)
        out.append(f'<line x1="{px:.2f}" y1="{TOP + ph}" x2="{px:.2f}" y2="{TOP + ph + 5}" stroke="black"/>')
        out.append(f'<text x="{px:.2f}" y="{TOP + ph + 18}" text-anchor="middle">{x:.4g}</text>')
    for y in _ticks(y_lo, y_hi):
        py = sy(y)
        out.append(f'<line x1="{LEFT - 5}" y1="{py:.2f}" x2="{LEFT}" y2="{py:.2f}" stroke="black"/>')
        out.append(f'<text x="{LEFT - 8}" y="{py + 4:.2f}" text-anchor="end">{y:.4g}</text>')
    out.append(f'<text x="{LEFT + pw / 2:.1f}" y="{HEIGHT - 10}" text-anchor="middle">epoch</text>')
    out.append(f'<text x="16" y="{TOP + ph / 2:.1f}" text-anchor="middle" '
               f'transform="rotate(-90 16 {TOP + ph / 2:.1f})">mean loss</text>')
    if len(pts) == 1:
        out.append(f'<circle cx="{sx(pts[0][0]):.2f}" cy="{sy(pts[0][1]):.2f}" r="3" fill="steelblue"/>')
    elif pts:
        coords = " ".join(f"{sx(x):.2f},{sy(y):.2f}" for x, y in pts)
        out.append(f'<polyline points="{coords}" fill="none" stroke="steelblue" stroke-width="1.5"/>')
    if skipped:
        out.append(f'<text x="{LEFT + pw}" y="{TOP - 6}" text-anchor="end" fill="firebrick">'
                   f'{skipped} non-finite epoch(s) omitted</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def emit_loss_chart(epochs: Sequence[int], losses: Sequence[float], path: str | Path,
                    title: str = "Training loss") -> None:
    Path(path).write_text(loss_chart_svg(epochs, losses, title), encoding="utf-8")
