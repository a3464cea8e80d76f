"""Small statistics helpers shared by probes and scans."""
from __future__ import annotations

import math

import numpy as np
from scipy.stats import binomtest


def wilson_interval(successes: int, trials: int, confidence: float = 0.95) -> tuple[float, float]:
    ci = binomtest(int(successes), int(trials)).proportion_ci(confidence, method="wilson")
    return float(ci.low), float(ci.high)


def fit_log_linear(x, y) -> tuple[float, float]:
    """Fit log y = a - c x over entries with y > 0; returns (c, R^2)."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    keep = y > 0
    if keep.sum() < 2:
        return math.nan, math.nan
    xs, ys = x[keep], np.log(y[keep])
    slope, icept = np.polyfit(xs, ys, 1)
    resid = ys - (slope * xs + icept)
    tot = float(np.sum((ys - ys.mean()) ** 2))
    return float(-slope), (1.0 - float(np.sum(resid**2)) / tot) if tot > 0 else 1.0


def fit_power_tail(x, y) -> tuple[float, float]:
    """Fit log y = a - c log x over entries with x, y > 0; returns (c, R^2)."""
    x = np.asarray(x, dtype=float)
    keep = x > 0
    return fit_log_linear(np.log(x[keep]), np.asarray(y, dtype=float)[keep])
