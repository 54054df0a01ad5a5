"""Dependency-free SVG output: training curves and track/trajectory renderings."""
from __future__ import annotations

import math
from pathlib import Path

import numpy as np

from .trackgen import TrackMap, wall_polylines


def _nice_ticks(lo: float, hi: float, target: int = 6) -> list[float]:
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / target
    mag = 10.0 ** math.floor(math.log10(raw))
    for mult in (1.0, 2.0, 5.0, 10.0):
        if raw <= mult * mag:
            step = mult * mag
            break
    first = math.ceil(lo / step) * step
    ticks = []
    t = first
    while t <= hi + 1e-12 * step:
        ticks.append(round(t, 12))
        t += step
    return ticks


def _fmt(v: float) -> str:
    if v == int(v) and abs(v) < 1e15:
        return str(int(v))
    return f"{v:g}"


def svg_line_chart(xs, ys, path, title: str, x_label: str, y_label: str,
                   moving_avg_window: int | None = None,
                   width: int = 800, height: int = 500) -> None:
    """Single-series line chart with optional moving-average overlay."""
    xs = np.asarray(xs, dtype=float)
    ys = np.asarray(ys, dtype=float)
    keep = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[keep], ys[keep]
    ml, mr, mt, mb = 70, 20, 40, 55
    pw, ph = width - ml - mr, height - mt - mb

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<text x="{width / 2}" y="24" text-anchor="middle" '
             f'font-family="sans-serif" font-size="16">{title}</text>']

    if len(xs) == 0:
        parts.append(f'<text x="{width / 2}" y="{height / 2}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="14">no data</text></svg>')
        Path(path).write_text("\n".join(parts) + "\n")
        return

    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    if x_hi == x_lo:
        x_hi = x_lo + 1.0
    if y_hi == y_lo:
        y_hi = y_lo + 1.0
    pad = 0.05 * (y_hi - y_lo)
    y_lo, y_hi = y_lo - pad, y_hi + pad

    def px(x):
        return ml + (x - x_lo) / (x_hi - x_lo) * pw

    def py(y):
        return mt + ph - (y - y_lo) / (y_hi - y_lo) * ph

    for t in _nice_ticks(x_lo, x_hi):
        parts.append(f'<line x1="{px(t):.2f}" y1="{mt + ph}" x2="{px(t):.2f}" '
                     f'y2="{mt + ph + 5}" stroke="black"/>')
        parts.append(f'<text x="{px(t):.2f}" y="{mt + ph + 20}" text-anchor="middle" '
                     f'font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    for t in _nice_ticks(y_lo, y_hi):
        parts.append(f'<line x1="{ml - 5}" y1="{py(t):.2f}" x2="{ml}" '
                     f'y2="{py(t):.2f}" stroke="black"/>')
        parts.append(f'<line x1="{ml}" y1="{py(t):.2f}" x2="{ml + pw}" '
                     f'y2="{py(t):.2f}" stroke="#eeeeee"/>')
        parts.append(f'<text x="{ml - 8}" y="{py(t):.2f}" text-anchor="end" '
                     f'dy="4" font-family="sans-serif" font-size="11">{_fmt(t)}</text>')
    parts.append(f'<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" '
                 'fill="none" stroke="black"/>')
    parts.append(f'<text x="{ml + pw / 2}" y="{height - 12}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13">{x_label}</text>')
    parts.append(f'<text x="18" y="{mt + ph / 2}" text-anchor="middle" '
                 f'font-family="sans-serif" font-size="13" '
                 f'transform="rotate(-90 18 {mt + ph / 2})">{y_label}</text>')

    pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(xs, ys))
    parts.append(f'<polyline points="{pts}" fill="none" stroke="#4878cf" '
                 'stroke-width="1.5"/>')

    if moving_avg_window and len(ys) >= 2:
        w = min(moving_avg_window, len(ys))
        kernel = np.ones(w) / w
        smooth = np.convolve(ys, kernel, mode="valid")
        sx = xs[w - 1:]
        pts = " ".join(f"{px(x):.2f},{py(y):.2f}" for x, y in zip(sx, smooth))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="#d65f5f" '
                     'stroke-width="2.5"/>')
    parts.append("</svg>")
    Path(path).write_text("\n".join(parts) + "\n")


def _speed_color(frac: float) -> str:
    frac = min(max(frac, 0.0), 1.0)
    r = int(40 + 215 * frac)
    g = int(90 * (1.0 - frac) + 40)
    b = int(220 * (1.0 - frac) + 35)
    return f"#{r:02x}{g:02x}{b:02x}"


def render_track_svg(track: TrackMap, out_path, trajectory=None,
                     width: int = 900, height: int = 900) -> None:
    """Static rendering: walls, centerline, obstacles, and an optional
    trajectory of (t, x, y, heading, speed) records colored by speed.

    Geometry is written in world coordinates inside a fitted transform group,
    so the coordinates in the file stay meaningful.
    """
    left, right = wall_polylines(track)
    xs = np.concatenate([left[:, 0], right[:, 0]])
    ys = np.concatenate([left[:, 1], right[:, 1]])
    if trajectory:
        xs = np.concatenate([xs, [r[1] for r in trajectory]])
        ys = np.concatenate([ys, [r[2] for r in trajectory]])
    x_lo, x_hi = float(xs.min()), float(xs.max())
    y_lo, y_hi = float(ys.min()), float(ys.max())
    span = max(x_hi - x_lo, y_hi - y_lo, 1e-6)
    scale = 0.92 * min(width, height) / span
    tx = width / 2 - scale * (x_lo + x_hi) / 2
    ty = height / 2 + scale * (y_lo + y_hi) / 2

    def poly(points, stroke, extra=""):
        pts = " ".join(f"{x:.6f},{y:.6f}" for x, y in points)
        return (f'<polyline points="{pts}" fill="none" stroke="{stroke}" '
                f'vector-effect="non-scaling-stroke" {extra}/>')

    parts = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" '
             f'height="{height}" viewBox="0 0 {width} {height}">',
             f'<rect width="{width}" height="{height}" fill="white"/>',
             f'<g transform="translate({tx:.4f},{ty:.4f}) scale({scale:.6f},{-scale:.6f})">',
             poly(left, "#333333", 'stroke-width="1.8"'),
             poly(right, "#333333", 'stroke-width="1.8"'),
             poly(track.centerline, "#bbbbbb",
                  'stroke-width="1" stroke-dasharray="0.5,0.5" class="centerline"')]
    for ob in track.obstacles:
        pts = " ".join(f"{x:.6f},{y:.6f}" for x, y in ob.vertices)
        parts.append(f'<polygon points="{pts}" fill="#888888" stroke="#444444" '
                     'vector-effect="non-scaling-stroke"/>')

    if trajectory and len(trajectory) >= 2:
        speeds = np.array([r[4] for r in trajectory])
        v_hi = max(float(speeds.max()), 1e-9)
        buckets = np.minimum((speeds / v_hi * 15).astype(int), 15)
        start = 0
        for i in range(1, len(trajectory) + 1):
            if i == len(trajectory) or buckets[i] != buckets[start]:
                if i - start >= 1:
                    chunk = trajectory[start:min(i + 1, len(trajectory))]
                    pts = [(r[1], r[2]) for r in chunk]
                    color = _speed_color(buckets[start] / 15)
                    parts.append(poly(pts, color, 'stroke-width="2" class="traj"'))
                start = i
    # spawn marker
    sx, sy, _ = track.spawn
    parts.append(f'<circle cx="{sx:.6f}" cy="{sy:.6f}" r="{0.01 * span:.4f}" '
                 'fill="#2ca02c"/>')
    parts.append("</g></svg>")
    Path(out_path).write_text("\n".join(parts) + "\n")
