"""Fits applied to scan tables."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy import optimize, special

from ..rng import as_generator


@dataclass(frozen=True)
class CriticalLevel:
    estimate: float
    width: float
    ci_low: float
    ci_high: float

    def __float__(self) -> float:
        return self.estimate


def _read_table(table) -> list[dict]:
    if isinstance(table, (str, Path)):
        with open(table, newline="", encoding="utf-8") as fh:
            return list(csv.DictReader(fh))
    return [dict(r) for r in table]


def _scan_arrays(table):
    rows = _read_table(table)
    lv, k, n = [], [], []
    for r in rows:
        level = float(r["level"])
        if "successes" in r and "trials" in r and r["trials"] not in (None, ""):
            trials = float(r["trials"])
            succ = float(r["successes"])
        else:
            trials = float(r.get("trials") or 1.0)
            succ = float(r["freq"]) * trials
        lv.append(level)
        k.append(succ)
        n.append(trials)
    order = np.argsort(lv)
    return np.array(lv)[order], np.array(k)[order], np.array(n)[order]


def _fit(levels, k, n, min_width):
    span = levels[-1] - levels[0]
    freq = k / n

    def nll(theta):
        mid, logw = theta
        z = (levels - mid) / math.exp(logw)
        # log p = -log(1+e^-z), log(1-p) = -log(1+e^z)
        return float(np.sum(k * np.logaddexp(0, -z) + (n - k) * np.logaddexp(0, z)))

    above = np.nonzero(freq >= 0.5)[0]
    mid0 = levels[above[0]] if above.size else levels[-1]
    if above.size and above[0] > 0:
        i = above[0]
        f0, f1 = freq[i - 1], freq[i]
        mid0 = levels[i - 1] + (0.5 - f0) / (f1 - f0) * (levels[i] - levels[i - 1]) if f1 > f0 else levels[i]
    bounds = [(levels[0] - span, levels[-1] + span), (math.log(min_width), math.log(10 * span))]
    x0 = [mid0, math.log(max(span / 10, min_width))]
    res = optimize.minimize(nll, x0, method="L-BFGS-B", bounds=bounds, options={"ftol": 1e-15, "gtol": 1e-12})
    return float(res.x[0]), float(math.exp(res.x[1]))


def estimate_critical_level(table, bootstrap: int = 200, seed: int = 0, confidence: float = 0.95) -> CriticalLevel:
    """Level where a logistic curve fitted to the frequency scan crosses 1/2.

    ``table`` rows (dicts or a CSV path) carry ``level`` and either
    ``successes``/``trials`` or ``freq``. The fit maximizes the binomial
    likelihood of ``1/(1 + exp(-(level - mid)/width))`` with positive width,
    so the curve is increasing. The interval comes from a parametric bootstrap
    when trial counts are known.
    """
    levels, k, n = _scan_arrays(table)
    if len(levels) < 5:
        raise ValueError(f"need at least 5 levels, got {len(levels)}")
    freq = k / n
    if not (freq.min() < 0.5 < freq.max()):
        raise ValueError("scan frequencies do not straddle 1/2")
    span = levels[-1] - levels[0]
    min_width = 1e-3 * span
    mid, width = _fit(levels, k, n, min_width)
    lo = hi = math.nan
    if bootstrap > 0 and np.all(n > 1):
        rng = as_generator(seed)
        p = special.expit((levels - mid) / width)
        mids = []
        for _ in range(bootstrap):
            kb = rng.binomial(n.astype(np.int64), p).astype(float)
            mids.append(_fit(levels, kb, n, min_width)[0])
        a = (1 - confidence) / 2
        lo, hi = (float(v) for v in np.quantile(mids, [a, 1 - a]))
    return CriticalLevel(mid, width, lo, hi)
