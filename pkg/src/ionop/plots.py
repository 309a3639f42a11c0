"""Dependency-free SVG renderings of training curves and error distributions.

These are plain coordinate drawings (polylines, rectangles, text); nothing
beyond what a reviewer needs to eyeball a run. The CSV files next to them
remain the authoritative data.
"""

from __future__ import annotations

import csv
import math
from pathlib import Path
from typing import Dict, List, Sequence

import numpy as np

WIDTH, HEIGHT = 720, 440
MARGIN_L, MARGIN_R, MARGIN_T, MARGIN_B = 70, 20, 30, 50

# series -> stroke, matching the usual loss-figure convention
HISTORY_SERIES = [
    ("train_l2", "#1f77b4"),  # blue
    ("test_l1", "#2ca02c"),   # green
    ("test_l2", "#ff7f0e"),   # orange
    ("test_h1", "#d62728"),   # red
]


def _svg_header() -> List[str]:
    return [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}" font-family="monospace" font-size="12">',
        f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
    ]


def _axes(parts: List[str], x_label: str, y_label: str) -> None:
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{HEIGHT - MARGIN_B}" x2="{WIDTH - MARGIN_R}" '
        f'y2="{HEIGHT - MARGIN_B}" stroke="black"/>'
    )
    parts.append(
        f'<line x1="{MARGIN_L}" y1="{MARGIN_T}" x2="{MARGIN_L}" y2="{HEIGHT - MARGIN_B}" stroke="black"/>'
    )
    parts.append(f'<text x="{WIDTH // 2}" y="{HEIGHT - 12}">{x_label}</text>')
    parts.append(f'<text x="12" y="{MARGIN_T - 10}">{y_label}</text>')


def read_history_csv(path) -> Dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        rows = list(csv.DictReader(fh))
    if not rows:
        raise ValueError(f"{path}: empty history CSV")
    out: Dict[str, np.ndarray] = {}
    for key in rows[0]:
        out[key] = np.array([float(r[key]) for r in rows])
    return out


def history_svg(history_csv, out_path) -> Path:
    """Loss curves: training relative L2 plus test L1/L2/H1 on a log axis."""
    data = read_history_csv(history_csv)
    epochs = data["epoch"]
    series = [(name, color, data[name]) for name, color in HISTORY_SERIES if name in data]
    values = np.concatenate([s[2] for s in series])
    values = values[np.isfinite(values) & (values > 0)]
    lo, hi = float(np.log10(values.min())), float(np.log10(values.max()))
    if hi - lo < 1e-9:
        hi = lo + 1.0
    x0, x1 = float(epochs.min()), float(max(epochs.max(), epochs.min() + 1))

    def px(e):
        return MARGIN_L + (e - x0) / (x1 - x0) * (WIDTH - MARGIN_L - MARGIN_R)

    def py(v):
        lv = math.log10(max(v, 10 ** lo))
        return HEIGHT - MARGIN_B - (lv - lo) / (hi - lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    parts = _svg_header()
    _axes(parts, "epoch", "relative error (log)")
    for tick in range(math.floor(lo), math.ceil(hi) + 1):
        y = py(10**tick)
        if MARGIN_T <= y <= HEIGHT - MARGIN_B:
            parts.append(f'<line x1="{MARGIN_L - 4}" y1="{y:.1f}" x2="{MARGIN_L}" y2="{y:.1f}" stroke="black"/>')
            parts.append(f'<text x="{MARGIN_L - 48}" y="{y + 4:.1f}">1e{tick}</text>')
    for i, (name, color, vals) in enumerate(series):
        pts = " ".join(f"{px(e):.1f},{py(v):.1f}" for e, v in zip(epochs, vals))
        parts.append(f'<polyline points="{pts}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        lx = WIDTH - MARGIN_R - 130
        ly = MARGIN_T + 16 * (i + 1)
        parts.append(f'<line x1="{lx}" y1="{ly - 4}" x2="{lx + 22}" y2="{ly - 4}" stroke="{color}" stroke-width="2"/>')
        parts.append(f'<text x="{lx + 28}" y="{ly}">{name}</text>')
    parts.append("</svg>")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(parts) + "\n")
    return out_path


def box_svg(groups: Dict[str, Sequence[float]], out_path, y_label: str = "relative L2") -> Path:
    """One box (quartiles, median, 1.5 IQR whiskers, outlier dots) per group."""
    labels = list(groups)
    all_vals = np.concatenate([np.asarray(groups[k], dtype=float) for k in labels])
    lo, hi = float(all_vals.min()), float(all_vals.max())
    if hi - lo < 1e-12:
        hi = lo + 1.0
    pad = 0.08 * (hi - lo)
    lo, hi = lo - pad, hi + pad

    def py(v):
        return HEIGHT - MARGIN_B - (v - lo) / (hi - lo) * (HEIGHT - MARGIN_T - MARGIN_B)

    span = (WIDTH - MARGIN_L - MARGIN_R) / max(len(labels), 1)
    parts = _svg_header()
    _axes(parts, "", y_label)
    for i, label in enumerate(labels):
        vals = np.asarray(groups[label], dtype=float)
        q1, med, q3 = np.percentile(vals, [25, 50, 75])
        iqr = q3 - q1
        lo_w = vals[vals >= q1 - 1.5 * iqr].min()
        hi_w = vals[vals <= q3 + 1.5 * iqr].max()
        cx = MARGIN_L + span * (i + 0.5)
        bw = min(60.0, span * 0.5)
        parts.append(f'<line x1="{cx:.1f}" y1="{py(lo_w):.1f}" x2="{cx:.1f}" y2="{py(q1):.1f}" stroke="black"/>')
        parts.append(f'<line x1="{cx:.1f}" y1="{py(q3):.1f}" x2="{cx:.1f}" y2="{py(hi_w):.1f}" stroke="black"/>')
        parts.append(
            f'<rect x="{cx - bw / 2:.1f}" y="{py(q3):.1f}" width="{bw:.1f}" '
            f'height="{abs(py(q1) - py(q3)):.1f}" fill="#9ecae1" stroke="black"/>'
        )
        parts.append(
            f'<line x1="{cx - bw / 2:.1f}" y1="{py(med):.1f}" x2="{cx + bw / 2:.1f}" '
            f'y2="{py(med):.1f}" stroke="black" stroke-width="2"/>'
        )
        for v in vals[(vals < q1 - 1.5 * iqr) | (vals > q3 + 1.5 * iqr)]:
            parts.append(f'<circle cx="{cx:.1f}" cy="{py(v):.1f}" r="2.5" fill="none" stroke="black"/>')
        parts.append(f'<text x="{cx - 4 * len(label):.1f}" y="{HEIGHT - MARGIN_B + 18}">{label}</text>')
    parts.append("</svg>")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(parts) + "\n")
    return out_path


def bar_svg(labels: Sequence[str], values: Sequence[float], out_path, y_label: str = "relative L2") -> Path:
    values = np.asarray(values, dtype=float)
    hi = float(values.max()) if len(values) else 1.0
    hi = hi if hi > 0 else 1.0

    def py(v):
        return HEIGHT - MARGIN_B - (v / (1.1 * hi)) * (HEIGHT - MARGIN_T - MARGIN_B)

    span = (WIDTH - MARGIN_L - MARGIN_R) / max(len(labels), 1)
    parts = _svg_header()
    _axes(parts, "", y_label)
    for i, (label, v) in enumerate(zip(labels, values)):
        cx = MARGIN_L + span * (i + 0.5)
        bw = min(60.0, span * 0.6)
        parts.append(
            f'<rect x="{cx - bw / 2:.1f}" y="{py(v):.1f}" width="{bw:.1f}" '
            f'height="{HEIGHT - MARGIN_B - py(v):.1f}" fill="#fdae6b" stroke="black"/>'
        )
        parts.append(f'<text x="{cx - 4 * len(label):.1f}" y="{HEIGHT - MARGIN_B + 18}">{label}</text>')
        parts.append(f'<text x="{cx - 20:.1f}" y="{py(v) - 6:.1f}">{v:.2e}</text>')
    parts.append("</svg>")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)
    out_path.write_text("\n".join(parts) + "\n")
    return out_path
