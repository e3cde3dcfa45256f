"""Atomic CSV/text output and a dependency-free SVG scatter/line plot."""

from __future__ import annotations

import csv
import io
import os
import tempfile
from typing import Dict, Iterable, Sequence, Tuple
from xml.sax.saxutils import escape


def atomic_write_text(path: str, text: str) -> None:
    """Write to a temporary file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _cell(x) -> str:
    if isinstance(x, float):
        return repr(x)
    if hasattr(x, "item"):  # numpy scalar
        return _cell(x.item())
    return str(x)


def csv_text(header: Sequence[str], rows: Iterable[Sequence]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([_cell(x) for x in row])
    return buf.getvalue()


def write_csv(path: str, header: Sequence[str], rows: Iterable[Sequence]) -> None:
    atomic_write_text(path, csv_text(header, rows))


COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def svg_plot(
    series: Dict[str, Tuple[Sequence[float], Sequence[float]]],
    xlabel: str,
    ylabel: str,
    lines: bool = True,
    width: int = 560,
    height: int = 400,
) -> str:
    """Scatter (optionally joined) of named ``(x, y)`` series."""
    xs = [x for sx, _ in series.values() for x in sx]
    ys = [y for _, sy in series.values() for y in sy]
    if not xs:
        raise ValueError("nothing to plot")
    pad = 50
    x0, x1 = min(xs), max(xs)
    y0, y1 = min(ys), max(ys)
    x1 = x1 if x1 > x0 else x0 + 1.0
    y1 = y1 if y1 > y0 else y0 + 1.0

    def px(x):
        return pad + (x - x0) / (x1 - x0) * (width - 2 * pad)

    def py(y):
        return height - pad - (y - y0) / (y1 - y0) * (height - 2 * pad)

    out = [f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}">']
    out.append(f'<rect x="{pad}" y="{pad}" width="{width - 2 * pad}" height="{height - 2 * pad}" fill="none" stroke="black"/>')
    out.append(f'<text x="{width / 2}" y="{height - 10}" text-anchor="middle">{escape(xlabel)}</text>')
    out.append(f'<text x="15" y="{height / 2}" transform="rotate(-90 15 {height / 2})" text-anchor="middle">{escape(ylabel)}</text>')
    for v, x in ((x0, pad), (x1, width - pad)):
        out.append(f'<text x="{x}" y="{height - pad + 15}" text-anchor="middle" font-size="10">{v:.4g}</text>')
    for v, y in ((y0, height - pad), (y1, pad)):
        out.append(f'<text x="{pad - 5}" y="{y}" text-anchor="end" font-size="10">{v:.4g}</text>')
    for i, (name, (sx, sy)) in enumerate(series.items()):
        color = COLORS[i % len(COLORS)]
        pts = [(px(x), py(y)) for x, y in zip(sx, sy)]
        if lines and len(pts) > 1:
            path = " ".join(f"{x:.2f},{y:.2f}" for x, y in pts)
            out.append(f'<polyline points="{path}" fill="none" stroke="{color}"/>')
        for x, y in pts:
            out.append(f'<circle cx="{x:.2f}" cy="{y:.2f}" r="3" fill="{color}"/>')
        out.append(f'<text x="{width - pad + 5 - 100}" y="{pad + 15 + 15 * i}" fill="{color}" font-size="12">{escape(name)}</text>')
    out.append("</svg>")
    return "\n".join(out) + "\n"
