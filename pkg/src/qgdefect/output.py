"""Result serialization: deterministic JSON, CSV tables and small SVG line plots."""

from __future__ import annotations

import csv
import io
import json
import math
from datetime import datetime, timezone
from pathlib import Path
from xml.sax.saxutils import escape

import numpy as np


def plain(x):
    """Recursively convert numpy scalars/arrays and tuples to JSON-ready values."""
    if isinstance(x, dict):
        return {str(k): plain(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [plain(v) for v in x]
    if isinstance(x, np.ndarray):
        return plain(x.tolist())
    if isinstance(x, (np.bool_,)):
        return bool(x)
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, (float, np.floating)):
        x = float(x)
        if math.isnan(x):
            return "nan"
        if math.isinf(x):
            return "inf" if x > 0 else "-inf"
        return x
    return x


def envelope(command: str, config: dict, result, version: str) -> dict:
    return {"command": command, "version": version, "config": config, "result": result,
            "timestamp": datetime.now(timezone.utc).isoformat(timespec="seconds")}


def dumps(doc) -> str:
    return json.dumps(plain(doc), sort_keys=True, indent=2, allow_nan=False) + "\n"


def without_timestamp(text: str) -> str:
    """Canonical form of a result document with the timestamp field removed."""
    doc = json.loads(text)
    doc.pop("timestamp", None)
    return dumps(doc)


def provenance_lines(config: dict, version: str) -> list[str]:
    return [f"# qgdefect {version}", "# config " + json.dumps(plain(config), sort_keys=True)]


def csv_text(rows: list[dict], header_lines=(), columns=None) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(line + "\n")
    if columns is None:
        columns = []
        for r in rows:
            columns += [k for k in r if k not in columns]
    w = csv.DictWriter(buf, fieldnames=columns, extrasaction="ignore", lineterminator="\n")
    w.writeheader()
    for r in rows:
        w.writerow({k: _cell(r.get(k)) for k in columns})
    return buf.getvalue()


def _cell(v):
    v = plain(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return "" if v is None else v


def read_csv(text: str) -> list[dict]:
    lines = [ln for ln in text.splitlines() if not ln.startswith("#")]
    return list(csv.DictReader(lines))


_COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def _ticks(lo, hi, n=5):
    if hi <= lo:
        hi = lo + 1.0
    step = 10 ** math.floor(math.log10((hi - lo) / n))
    for m in (1, 2, 5, 10):
        if (hi - lo) / (m * step) <= n:
            step *= m
            break
    start = math.ceil(lo / step) * step
    return [start + k * step for k in range(int((hi - start) / step + 1e-9) + 1)]


def svg_plot(series: dict, xlabel: str = "", ylabel: str = "", title: str = "", logx: bool = False,
             metadata: str = "", width: int = 640, height: int = 420) -> str:
    """Line plot of ``{label: (x, y)}`` as an SVG document."""
    pad_l, pad_r, pad_t, pad_b = 70, 20, 36, 50
    pts = {}
    for label, (x, y) in series.items():
        x, y = np.asarray(x, float), np.asarray(y, float)
        ok = np.isfinite(x) & np.isfinite(y) & ((x > 0) if logx else True)
        pts[label] = (np.log10(x[ok]) if logx else x[ok], y[ok])
    allx = np.concatenate([p[0] for p in pts.values()]) if pts else np.zeros(1)
    ally = np.concatenate([p[1] for p in pts.values()]) if pts else np.zeros(1)
    if allx.size == 0:
        allx = ally = np.zeros(1)
    x0, x1 = float(allx.min()), float(allx.max())
    y0, y1 = float(ally.min()), float(ally.max())
    if x1 == x0:
        x0, x1 = x0 - 1, x1 + 1
    if y1 == y0:
        y0, y1 = y0 - 1, y1 + 1
    W, Hh = width - pad_l - pad_r, height - pad_t - pad_b

    def sx(v):
        return pad_l + (v - x0) / (x1 - x0) * W

    def sy(v):
        return pad_t + (1 - (v - y0) / (y1 - y0)) * Hh

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
           f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">']
    if metadata:
        out.append(f"<metadata>{escape(metadata)}</metadata>")
    out.append(f'<rect x="{pad_l}" y="{pad_t}" width="{W}" height="{Hh}" fill="none" stroke="#444"/>')
    for t in _ticks(x0, x1):
        lab = f"{10 ** t:.3g}" if logx else f"{t:.4g}"
        out.append(f'<line x1="{sx(t):.1f}" y1="{pad_t + Hh}" x2="{sx(t):.1f}" y2="{pad_t + Hh + 4}" stroke="#444"/>')
        out.append(f'<text x="{sx(t):.1f}" y="{pad_t + Hh + 16}" text-anchor="middle">{lab}</text>')
    for t in _ticks(y0, y1):
        out.append(f'<line x1="{pad_l - 4}" y1="{sy(t):.1f}" x2="{pad_l}" y2="{sy(t):.1f}" stroke="#444"/>')
        out.append(f'<text x="{pad_l - 6}" y="{sy(t) + 4:.1f}" text-anchor="end">{t:.4g}</text>')
    if y0 < 0 < y1:
        out.append(f'<line x1="{pad_l}" y1="{sy(0):.1f}" x2="{pad_l + W}" y2="{sy(0):.1f}" '
                   'stroke="#999" stroke-dasharray="4 3"/>')
    for k, (label, (x, y)) in enumerate(pts.items()):
        col = _COLORS[k % len(_COLORS)]
        if x.size:
            path = " ".join(f"{sx(a):.2f},{sy(b):.2f}" for a, b in zip(x, y))
            out.append(f'<polyline fill="none" stroke="{col}" stroke-width="1.5" points="{path}"/>')
            for a, b in zip(x, y):
                out.append(f'<circle cx="{sx(a):.2f}" cy="{sy(b):.2f}" r="2" fill="{col}"/>')
        out.append(f'<text x="{pad_l + W - 4}" y="{pad_t + 14 + 14 * k}" text-anchor="end" fill="{col}">'
                   f'{escape(str(label))}</text>')
    out.append(f'<text x="{pad_l + W / 2}" y="{height - 12}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="16" y="{pad_t + Hh / 2}" text-anchor="middle" '
               f'transform="rotate(-90 16 {pad_t + Hh / 2})">{escape(ylabel)}</text>')
    out.append(f'<text x="{width / 2}" y="22" text-anchor="middle" font-size="13">{escape(title)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


def write(path: Path, text: str) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)
    return path
