"""Static SVG 1.1 rendering of regime atlases (one q-axis per p value)."""
from __future__ import annotations

from typing import Iterable, Sequence
from xml.sax.saxutils import escape

from .regime import FIGURE_CASES, Atlas, format_number

FILL = {
    "FiniteEnergyRed": "#d62728",
    "InfiniteEnergyOrange": "#ff7f0e",
    "RenormalizedYellow": "#f2d500",
}
NEUTRAL = "#d9d9d9"

WIDTH = 760
ROW = 96
LEFT = 60
AXIS = 620


def _x(q: float, qmax: float) -> float:
    return LEFT + AXIS * q / qmax


def atlas_svg(atlases: Sequence[Atlas]) -> str:
    atlases = list(atlases)
    height = 40 + ROW * len(atlases)
    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{height}" '
        f'viewBox="0 0 {WIDTH} {height}" font-family="sans-serif" font-size="11">',
        '<rect x="0" y="0" width="100%" height="100%" fill="white"/>',
    ]
    legend_x = LEFT
    for name, colour in FILL.items():
        out.append(f'<rect x="{legend_x}" y="10" width="14" height="10" fill="{colour}"/>')
        out.append(f'<text x="{legend_x + 18}" y="19">{escape(name)}</text>')
        legend_x += 190
    for row, a in enumerate(atlases):
        y0 = 40 + ROW * row
        qmax = float(a.p) * 1.08
        title = f"N={a.N}, p={format_number(a.p)}  (case {a.case}: {FIGURE_CASES[a.case]})"
        out.append(f'<text x="{LEFT}" y="{y0 + 14}" font-weight="bold">{escape(title)}</text>')
        ybar = y0 + 26
        out.append(f'<rect x="{LEFT}" y="{ybar}" width="{AXIS}" height="16" fill="{NEUTRAL}"/>')
        for lo, hi, regime in a.segments():
            colour = FILL.get(regime)
            if colour is None:
                continue
            x0, x1 = _x(float(lo), qmax), _x(float(hi), qmax)
            out.append(f'<rect x="{x0:.3f}" y="{ybar}" width="{x1 - x0:.3f}" height="16" fill="{colour}"/>')
        out.append(f'<line x1="{LEFT}" y1="{ybar + 16}" x2="{LEFT + AXIS}" y2="{ybar + 16}" stroke="black"/>')
        out.append(f'<text x="{LEFT + AXIS + 6}" y="{ybar + 20}">q</text>')
        seen = []
        for b in a.breaks:
            x = _x(float(b.q), qmax)
            out.append(f'<line x1="{x:.3f}" y1="{ybar - 3}" x2="{x:.3f}" y2="{ybar + 20}" stroke="black"/>')
            stack = sum(1 for s in seen if abs(s - x) < 1e-9)
            seen.append(x)
            ty = ybar + 32 + 12 * stack
            out.append(
                f'<text x="{x:.3f}" y="{ty}" text-anchor="middle">{escape(b.label)} = {format_number(b.q)}</text>'
            )
    out.append("</svg>")
    return "\n".join(out) + "\n"
