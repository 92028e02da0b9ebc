"""Static SVG line charts from a metrics CSV, with no plotting dependency."""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np

from ..errors import ChartError
from .runner import CSV_HEADER, read_metrics

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf")


@dataclass(frozen=True)
class ChartSpec:
    y: str = "accuracy"
    x: str = "round"
    overlay: str | None = "epsilon"
    width: int = 760
    height: int = 440
    title: str | None = None


def _series(rows, x, y):
    """``{label: (xs, mean, lo, hi)}`` aggregated over seeds."""
    grouped: dict[str, dict[float, list[float]]] = {}
    for row in rows:
        if row.get("status", "ok") != "ok" or row[y] in ("", "inf") or row[x] == "":
            continue
        grouped.setdefault(row["sweep"], {}).setdefault(float(row[x]), []).append(float(row[y]))
    out = {}
    for label, points in grouped.items():
        xs = sorted(points)
        vals = [points[v] for v in xs]
        out[label] = (np.array(xs), np.array([np.mean(v) for v in vals]),
                      np.array([min(v) for v in vals]), np.array([max(v) for v in vals]))
    return out


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1
    return [lo + (hi - lo) * i / (n - 1) for i in range(n)]


def _label(v):
    return f"{v:.0f}" if abs(v) >= 100 or float(v).is_integer() else f"{v:.2f}"


def render_svg(rows, spec: ChartSpec, experiment: str) -> str:
    series = _series(rows, spec.x, spec.y)
    if not series:
        raise ChartError(f"no plottable {spec.y!r} values")
    overlay = _series(rows, spec.x, spec.overlay) if spec.overlay else {}
    W, H = spec.width, spec.height
    left, right, top, bottom = 64, 170 if overlay else 150, 40, 48
    pw, ph = W - left - right, H - top - bottom
    x_lo = min(float(s[0].min()) for s in series.values())
    x_hi = max(float(s[0].max()) for s in series.values())
    if spec.y == "accuracy":
        y_lo, y_hi = 0.0, 1.0
    else:
        y_lo = min(float(s[2].min()) for s in series.values())
        y_hi = max(float(s[3].max()) for s in series.values())
    if x_hi <= x_lo:
        x_hi = x_lo + 1
    if y_hi <= y_lo:
        y_hi = y_lo + 1

    sx = lambda v: left + (v - x_lo) / (x_hi - x_lo) * pw
    sy = lambda v: top + ph - (v - y_lo) / (y_hi - y_lo) * ph
    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" '
           f'font-family="sans-serif" font-size="11">',
           f'<rect x="0" y="0" width="{W}" height="{H}" fill="white"/>',
           f'<text x="{left}" y="22" font-size="14">{escape(spec.title or f"{experiment}: {spec.y} vs {spec.x}")}</text>',
           f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>']
    for t in _ticks(x_lo, x_hi):
        out.append(f'<line x1="{sx(t):.2f}" y1="{top + ph}" x2="{sx(t):.2f}" y2="{top + ph + 4}" stroke="#444"/>')
        out.append(f'<text x="{sx(t):.2f}" y="{top + ph + 16}" text-anchor="middle">{_label(t)}</text>')
    for t in _ticks(y_lo, y_hi):
        out.append(f'<line x1="{left}" y1="{sy(t):.2f}" x2="{left + pw}" y2="{sy(t):.2f}" stroke="#ddd"/>')
        out.append(f'<text x="{left - 6}" y="{sy(t) + 4:.2f}" text-anchor="end">{_label(t)}</text>')
    out.append(f'<text x="{left + pw / 2:.2f}" y="{H - 10}" text-anchor="middle">{escape(spec.x)}</text>')
    out.append(f'<text x="16" y="{top + ph / 2:.2f}" transform="rotate(-90 16 {top + ph / 2:.2f})" '
               f'text-anchor="middle">{escape(spec.y)}</text>')

    for i, (label, (xs, mean, lo, hi)) in enumerate(series.items()):
        color = PALETTE[i % len(PALETTE)]
        if np.any(hi > lo):
            band = [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, hi)]
            band += [f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs[::-1], lo[::-1])]
            out.append(f'<polygon class="band" points="{" ".join(band)}" fill="{color}" fill-opacity="0.15" stroke="none"/>')
        pts = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(xs, mean))
        out.append(f'<polyline class="series" data-label="{escape(label)}" points="{pts}" '
                   f'fill="none" stroke="{color}" stroke-width="1.6"/>')
        ly = top + 12 + 16 * i
        out.append(f'<line x1="{left + pw + 12}" y1="{ly - 4}" x2="{left + pw + 30}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        out.append(f'<text x="{left + pw + 34}" y="{ly}">{escape(label or spec.y)}</text>')

    if overlay:
        vals = np.concatenate([s[1] for s in overlay.values()])
        use_log = bool(np.all(vals > 0) and vals.max() / vals.min() > 100)
        tf = (lambda v: math.log10(v)) if use_log else (lambda v: v)
        o_lo, o_hi = min(tf(v) for v in vals), max(tf(v) for v in vals)
        if o_hi <= o_lo:
            o_hi = o_lo + 1
        oy = lambda v: top + ph - (tf(v) - o_lo) / (o_hi - o_lo) * ph
        for t in _ticks(o_lo, o_hi):
            shown = 10 ** t if use_log else t
            out.append(f'<text x="{left + pw + 6}" y="{top + ph - (t - o_lo) / (o_hi - o_lo) * ph + 4:.2f}" '
                       f'fill="#666">{_label(shown)}</text>')
        for i, (label, (xs, mean, _, _)) in enumerate(overlay.items()):
            color = PALETTE[list(series).index(label) % len(PALETTE)] if label in series else "#666"
            pts = " ".join(f"{sx(a):.2f},{oy(b):.2f}" for a, b in zip(xs, mean))
            out.append(f'<polyline class="epsilon" data-label="{escape(label)}" points="{pts}" fill="none" '
                       f'stroke="{color}" stroke-width="1" stroke-dasharray="4 3"/>')
        scale = " (log)" if use_log else ""
        out.append(f'<text x="{left + pw + 12}" y="{top + ph + 16}" fill="#666">dashed: {escape(spec.overlay)}{scale}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def render_charts(metrics_path, out_dir=None, spec: ChartSpec | None = None) -> list[Path]:
    """Write one SVG per metrics file; return the written paths."""
    spec = spec or ChartSpec()
    metrics_path = Path(metrics_path)
    with open(metrics_path) as fh:
        header = [h for h in fh.readline().strip().split(",") if h]
    if not header:
        raise ChartError(f"{metrics_path} holds no rows")
    for column in (spec.x, spec.y, spec.overlay):
        if column and column not in header:
            raise ChartError(f"unknown column {column!r}; metrics have {', '.join(header or CSV_HEADER)}")
    rows = read_metrics(metrics_path)
    if not rows:
        raise ChartError(f"{metrics_path} holds no rows")
    overlay_present = spec.overlay and any(r[spec.overlay] not in ("", "inf") for r in rows)
    if not overlay_present:
        spec = ChartSpec(spec.y, spec.x, None, spec.width, spec.height, spec.title)
    experiment = rows[0]["experiment"]
    svg = render_svg(rows, spec, experiment)
    out_dir = Path(out_dir) if out_dir else metrics_path.parent
    out_dir.mkdir(parents=True, exist_ok=True)
    path = out_dir / f"{experiment}_{spec.y}.svg"
    path.write_text(svg)
    return [path]
