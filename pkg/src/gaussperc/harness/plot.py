"""Deterministic SVG plots of result tables.

Fonts are drawn as paths, ids are salted with a constant and the date
metadata is dropped, so identical tables give identical bytes.
"""
from __future__ import annotations

import csv
import io
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402
import numpy as np  # noqa: E402

FIGSIZE = (6.0, 4.0)
DPI = 72

_RC = {
    "svg.fonttype": "path",
    "svg.hashsalt": "gaussperc",
    "font.family": "DejaVu Sans",
    "path.simplify": False,
}


def _rows(table) -> list[dict]:
    if isinstance(table, (str, Path)):
        with open(table, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    return [dict(r) for r in table]


def _num(v) -> float:
    if isinstance(v, str):
        v = v.strip()
        if v == "":
            return math.nan
    return float(v)


def emit_plot(table, spec: dict, path=None) -> bytes:
    """Render ``spec['y']`` against ``spec['x']`` and return the SVG bytes.

    Spec keys: ``x``, ``y`` (required), ``kind`` (``scatter`` or ``line``),
    ``logx``, ``logy``, ``title``, ``xlabel``, ``ylabel`` and ``reference``,
    a dict ``{"kappa": k, "scale": c}`` overlaying ``c * log(x)^k``.
    """
    rows = _rows(table)
    xcol, ycol = spec.get("x"), spec.get("y")
    if not xcol or not ycol:
        raise KeyError("plot spec needs 'x' and 'y'")
    if rows:
        missing = [c for c in (xcol, ycol) if c not in rows[0]]
        if missing:
            raise KeyError(f"table lacks column(s) {', '.join(missing)}")
    xs = np.array([_num(r[xcol]) for r in rows], dtype=float)
    ys = np.array([_num(r[ycol]) for r in rows], dtype=float)
    keep = np.isfinite(xs) & np.isfinite(ys)
    xs, ys = xs[keep], ys[keep]
    with plt.rc_context(_RC):
        fig, ax = plt.subplots(figsize=FIGSIZE, dpi=DPI)
        try:
            _draw(ax, xs, ys, spec)
            buf = io.BytesIO()
            fig.savefig(buf, format="svg", metadata={"Date": None})
        finally:
            plt.close(fig)
    data = buf.getvalue()
    if path is not None:
        Path(path).write_bytes(data)
    return data


def _draw(ax, xs, ys, spec):
    if spec.get("logx"):
        ax.set_xscale("log")
    if spec.get("logy"):
        ax.set_yscale("log")
    ax.set_xlabel(spec.get("xlabel", spec["x"]))
    ax.set_ylabel(spec.get("ylabel", spec["y"]))
    if spec.get("title"):
        ax.set_title(spec["title"])
    if xs.size == 0:
        ax.text(0.5, 0.5, "no data", transform=ax.transAxes, ha="center", va="center")
        return
    if spec.get("kind", "scatter") == "line":
        order = np.argsort(xs)
        ax.plot(xs[order], ys[order], marker="o", linestyle="-", gid="data")
    else:
        ax.plot(xs, ys, marker="o", linestyle="none", gid="data")
    ref = spec.get("reference")
    if ref:
        lo, hi = xs.min(), xs.max()
        grid = np.geomspace(max(lo, 1.0 + 1e-9), max(hi, lo * 1.01, 1.1), 100)
        k = float(ref["kappa"])
        c = float(ref.get("scale", 1.0))
        ax.plot(grid, c * np.log(grid) ** k, linestyle="--", color="0.4",
                label=ref.get("label", f"log(x)^{k:g}"), gid="reference")
        ax.legend(loc="best")
