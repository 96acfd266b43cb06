"""Result writers: CSV tables, JSON summaries and standalone SVG line plots."""
from __future__ import annotations

import json
import math
from pathlib import Path

import numpy as np

PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def fmt(x) -> str:
    """17 significant digits, so the text round-trips to the same double."""
    if isinstance(x, (bool, np.bool_)):
        return "1" if x else "0"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    return f"{float(x):.17g}"


def write_csv(path, header, rows) -> Path:
    path = Path(path)
    lines = [",".join(header)]
    for row in rows:
        row = list(row)
        if len(row) != len(header):
            raise ValueError(f"row has {len(row)} fields, header has {len(header)}")
        lines.append(",".join(fmt(v) for v in row))
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def read_csv(path) -> tuple[list[str], np.ndarray]:
    with open(path, encoding="utf-8") as fh:
        header = fh.readline().strip().split(",")
    data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    return header, data


def _jsonable(x):
    if isinstance(x, dict):
        return {str(k): _jsonable(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_jsonable(v) for v in x]
    if isinstance(x, np.ndarray):
        return _jsonable(x.tolist())
    if isinstance(x, (bool, np.bool_)):
        return bool(x)
    if isinstance(x, (int, np.integer)):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        # JSON has no inf/nan
        return x if math.isfinite(x) else str(x)
    return x


def write_json(path, data) -> Path:
    path = Path(path)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(_jsonable(data), fh, indent=2, sort_keys=True)
        fh.write("\n")
    return path


def _ticks(lo, hi, count=5):
    if hi <= lo:
        hi = lo + 1.0
    raw = (hi - lo) / count
    mag = 10 ** math.floor(math.log10(raw))
    step = min((s * mag for s in (1, 2, 5, 10) if s * mag >= raw), default=10 * mag)
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def line_plot(path, series: dict, title: str = "", xlabel: str = "", ylabel: str = "", logy: bool = False,
              logx: bool = False, width: int = 640, height: int = 420) -> Path:
    """Write a self-contained SVG with one polyline per ``name -> (x, y)``.

    On log axes non-positive samples are dropped.
    """
    path = Path(path)
    clean = {}
    for name, (x, y) in series.items():
        x, y = np.asarray(x, dtype=float), np.asarray(y, dtype=float)
        keep = np.isfinite(x) & np.isfinite(y)
        if logy:
            keep &= y > 0
        if logx:
            keep &= x > 0
        if keep.any():
            clean[name] = (np.log10(x[keep]) if logx else x[keep], np.log10(y[keep]) if logy else y[keep])
    left, right, top, bottom = 70, 20, 30, 50
    pw, ph = width - left - right, height - top - bottom
    if clean:
        xs = np.concatenate([v[0] for v in clean.values()])
        ys = np.concatenate([v[1] for v in clean.values()])
        x0, x1, y0, y1 = xs.min(), xs.max(), ys.min(), ys.max()
    else:
        x0, x1, y0, y1 = 0.0, 1.0, 0.0, 1.0
    if x1 == x0:
        x0, x1 = x0 - 0.5, x1 + 0.5
    if y1 == y0:
        y0, y1 = y0 - 0.5, y1 + 0.5
    pad = 0.05 * (y1 - y0)
    y0, y1 = y0 - pad, y1 + pad

    def X(v):
        return left + (v - x0) / (x1 - x0) * pw

    def Y(v):
        return top + (y1 - v) / (y1 - y0) * ph

    def label(v, log):
        return f"1e{v:g}" if log else f"{v:.3g}"

    out = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">',
        f'<rect width="{width}" height="{height}" fill="white"/>',
        f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>',
    ]
    xt = [float(round(v)) for v in _ticks(x0, x1)] if logx else _ticks(x0, x1)
    yt = [float(v) for v in range(math.ceil(y0), math.floor(y1) + 1)] if logy else _ticks(y0, y1)
    for v in xt:
        if x0 <= v <= x1:
            out.append(f'<line x1="{X(v):.2f}" y1="{top + ph}" x2="{X(v):.2f}" y2="{top + ph + 4}" stroke="black"/>')
            out.append(f'<text x="{X(v):.2f}" y="{top + ph + 16}" text-anchor="middle">{label(v, logx)}</text>')
    for v in yt:
        if y0 <= v <= y1:
            out.append(f'<line x1="{left - 4}" y1="{Y(v):.2f}" x2="{left + pw}" y2="{Y(v):.2f}" stroke="#ddd"/>')
            out.append(f'<text x="{left - 6}" y="{Y(v) + 4:.2f}" text-anchor="end">{label(v, logy)}</text>')
    for i, (name, (x, y)) in enumerate(clean.items()):
        color = PALETTE[i % len(PALETTE)]
        pts = " ".join(f"{X(a):.2f},{Y(b):.2f}" for a, b in zip(x, y))
        out.append(f'<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{pts}"/>')
        if len(x) <= 12:
            out += [f'<circle cx="{X(a):.2f}" cy="{Y(b):.2f}" r="2.5" fill="{color}"/>' for a, b in zip(x, y)]
        out.append(f'<text x="{left + pw - 8}" y="{top + 16 + 14 * i}" text-anchor="end" fill="{color}">{_esc(name)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{top - 10}" text-anchor="middle" font-size="13">{_esc(title)}</text>')
    out.append(f'<text x="{left + pw / 2}" y="{height - 12}" text-anchor="middle">{_esc(xlabel)}</text>')
    out.append(
        f'<text x="16" y="{top + ph / 2}" text-anchor="middle" transform="rotate(-90 16 {top + ph / 2})">{_esc(ylabel)}</text>'
    )
    out.append("</svg>")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(out) + "\n")
    return path


def _esc(s: str) -> str:
    return s.replace("&", "&amp;").replace("<", "&lt;").replace(">", "&gt;")
