"""Chemical (intrinsic) distances inside excursion sets.

Paths move between face-adjacent occupied cells and every step costs the grid
spacing ``h``. All edges weigh the same, so breadth-first search gives exact
shortest paths. Grid geodesics overestimate the continuum length by at most a
factor sqrt(d).
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass

import numpy as np

from . import _kernels
from ._kernels import FACE
from .errors import ConfigError, check_budget
from .excursion import UPPER, ExcursionSet, excursion_set
from .field import BARGMANN_FOCK, Grid, make_kernel, sample_field
from .rng import trial_rng

log = logging.getLogger(__name__)

CONNECTED = "connected"
DISCONNECTED = "disconnected"
ENDPOINT_OUTSIDE = "endpoint-outside"

# components up to this size get an exact all-sources chemical diameter
EXACT_CHEM_CELLS = 2000


@dataclass(frozen=True)
class PathResult:
    status: str
    length: float
    path: np.ndarray | None = None

    @property
    def connected(self) -> bool:
        return self.status == CONNECTED


@dataclass(frozen=True)
class StretchRecord:
    x_norm: float
    connected: bool
    d_chem: float
    stretch: float
    level: float
    delta: float
    beta: float
    seed: int
    trial: int = 0
    kappa_target: float = math.nan


def _as_index(es: ExcursionSet, cell) -> tuple[int, ...]:
    idx = tuple(int(c) for c in cell)
    if len(idx) != es.grid.dim or any(i < 0 or i >= n for i, n in zip(idx, es.grid.shape)):
        raise ValueError(f"cell {cell} lies outside the grid")
    return idx


def _backtrack(dist: np.ndarray, end: tuple[int, ...]) -> np.ndarray:
    vecs = _kernels.neighbor_vectors(dist.ndim, FACE)
    shape = np.array(dist.shape)
    cur = np.array(end)
    path = [cur]
    while dist[tuple(cur)] > 0:
        want = dist[tuple(cur)] - 1
        for v in vecs:
            nb = cur + v
            if np.all(nb >= 0) and np.all(nb < shape) and dist[tuple(nb)] == want:
                cur = nb
                break
        path.append(cur)
    return np.array(path[::-1])


def chemical_distance(es: ExcursionSet, a, b, with_path: bool = True) -> PathResult:
    """Shortest face-adjacent path length between cells ``a`` and ``b`` within the set."""
    a = _as_index(es, a)
    b = _as_index(es, b)
    if not (es.occupied[a] and es.occupied[b]):
        return PathResult(ENDPOINT_OUTSIDE, math.inf)
    if es.adjacency == FACE and es.labels[a] != es.labels[b]:
        return PathResult(DISCONNECTED, math.inf)
    dist = _kernels.bfs_distances(es.occupied, a, es.backend)
    if dist[b] < 0:
        return PathResult(DISCONNECTED, math.inf)
    path = _backtrack(dist, b) if with_path else None
    return PathResult(CONNECTED, float(dist[b]) * es.grid.spacing, path)


def _component_crop(es: ExcursionSet, lab: int) -> tuple[np.ndarray, np.ndarray]:
    sl = es.bboxes[lab - 1]
    sub = es.labels[sl] == lab
    return sub, np.argwhere(sub)


def chemical_diameter(es: ExcursionSet, lab: int) -> tuple[float, bool]:
    """(diameter, exact) of one face component; double sweep above EXACT_CHEM_CELLS."""
    if es.adjacency != FACE:
        raise ValueError("chemical diameters need a face-adjacency set")
    if not 1 <= lab <= es.n_components:
        raise ValueError(f"no component {lab}")
    sub, cells = _component_crop(es, lab)
    h = es.grid.spacing
    if len(cells) <= EXACT_CHEM_CELLS:
        ecc = _kernels.eccentricities(sub, cells, backend=es.backend)
        return float(ecc.max()) * h, True
    lower = _double_sweep(sub, cells[0], sub, es.backend)
    return lower * h, False


def _double_sweep(mask: np.ndarray, start, targets: np.ndarray, backend) -> int:
    dist = _kernels.bfs_distances(mask, tuple(start), backend)
    reach = np.where(targets & (dist >= 0), dist, -1)
    far = np.unravel_index(int(np.argmax(reach)), mask.shape)
    dist = _kernels.bfs_distances(mask, far, backend)
    reach = np.where(targets & (dist >= 0), dist, -1)
    return int(reach.max())


def chemical_S(es: ExcursionSet, s: float, center=None) -> tuple[float, bool]:
    """Largest chemical diameter among components of set ∩ B_s, paths free to use the whole set.

    Returns ``(S, exact)``; components above EXACT_CHEM_CELLS cells fall back
    to a double-sweep lower bound and clear the flag.
    """
    grid = es.grid
    center = grid.origin if center is None else center
    if not grid.box_fits(center, s):
        raise ValueError(f"box B_{s} leaves the grid domain")
    inner = es.restrict(center, s)
    if inner.n_components == 0:
        return 0.0, True
    off = np.array(es.box_offset(center, s))
    best, exact = 0, True
    for lab in range(1, inner.n_components + 1):
        cells = inner.component_indices(lab) + off
        targets = np.zeros(es.grid.shape, dtype=bool)
        targets[tuple(cells.T)] = True
        if len(cells) <= EXACT_CHEM_CELLS:
            ecc = _kernels.eccentricities(es.occupied, cells, targets, es.backend)
            val = int(ecc.max())
        else:
            val = _double_sweep(es.occupied, cells[0], targets, es.backend)
            exact = False
        best = max(best, val)
    return best * grid.spacing, exact


def S_tail_probe(sampler, level: float, s: float, thresholds, trials: int, seed: int = 0) -> np.ndarray:
    """Empirical P(S(s, E) >= t) for each threshold t."""
    if trials < 1:
        raise ValueError("trials must be >= 1")
    thr = np.asarray(thresholds, dtype=float)
    hits = np.zeros(len(thr))
    for t in range(trials):
        f = sampler(trial_rng(seed, t))
        if s < 10 * f.grid.spacing:
            raise ValueError("s must be at least 10 grid spacings")
        val, _ = chemical_S(excursion_set(f, level), s)
        hits += val >= thr
    return hits / trials


def kappa_exponent(d: int, beta: float, delta: float) -> float:
    """(1 + delta)(d - 1)(1/2 + 1/(2 beta - d)); ``beta = inf`` gives the Gaussian-tail limit."""
    if delta < 0:
        raise ValueError("delta must be >= 0")
    if math.isinf(beta):
        return (1 + delta) * (d - 1) * 0.5
    if 2 * beta - d <= 0:
        raise ValueError("2*beta - d must be positive")
    return (1 + delta) * (d - 1) * (0.5 + 1.0 / (2 * beta - d))


def schedule_scale(x_norm: float, beta: float, delta: float, d: int, h: float) -> tuple[float, bool]:
    """Truncation/box scale log^{(1+delta)/(2 beta - d)}(x), clamped below at 4h.

    Returns ``(scale, clamped)``.
    """
    expo = 0.0 if math.isinf(beta) else (1 + delta) / (2 * beta - d)
    val = math.log(x_norm) ** expo if x_norm > 1 else 0.0
    if val < 4 * h:
        return 4 * h, True
    return val, False


# ---------------------------------------------------------------------------
# stretch experiment


def pair_domain(x_norm: float, spacing: float, dim: int = 2, margin: float = 0.25,
                min_margin: float = 8.0) -> Grid:
    """Grid holding 0 and x = (|x|, 0, ...) with a margin of max(min_margin, margin * |x|)."""
    m = max(min_margin, margin * x_norm)
    half = [x_norm / 2 + m] + [m] * (dim - 1)
    center = [x_norm / 2] + [0.0] * (dim - 1)
    g = Grid.centered(dim, half, spacing, center)
    check_budget(g.n_cells, f"domain for |x|={x_norm}")
    return g


@dataclass(frozen=True)
class StretchConfig:
    levels: tuple[float, ...]
    distances: tuple[float, ...]
    trials: int
    spacing: float = 0.25
    kernel: str = BARGMANN_FOCK
    beta: float = math.inf
    delta: float = 0.5
    seed: int = 0
    margin: float = 0.25  # extra domain on each side, as a fraction of ||x||
    min_margin: float = 8.0
    dim: int = 2

    def __post_init__(self):
        if not self.levels or any(not l > 0 for l in self.levels):
            raise ConfigError("levels", "need at least one level, all > 0")
        if not self.distances or any(not x > 1 for x in self.distances):
            raise ConfigError("distances", "need distances > 1")
        if self.trials < 1:
            raise ConfigError("trials", "must be >= 1")
        object.__setattr__(self, "levels", tuple(float(l) for l in self.levels))
        object.__setattr__(self, "distances", tuple(float(x) for x in self.distances))

    def grid_for(self, x_norm: float) -> Grid:
        return pair_domain(x_norm, self.spacing, self.dim, self.margin, self.min_margin)


def stretch_setup(config: StretchConfig, x_norm: float):
    """(grid, kernel, cell of 0, cell of x, target stretch) for one distance."""
    beta = None if math.isinf(config.beta) else config.beta
    kernel = make_kernel(config.kernel, config.dim, beta)
    kappa = kappa_exponent(config.dim, config.beta, config.delta)
    grid = config.grid_for(x_norm)
    a = grid.index_of([0.0] * config.dim)
    b = grid.index_of([x_norm] + [0.0] * (config.dim - 1))
    return grid, kernel, a, b, math.log(x_norm) ** kappa


def stretch_trial(config: StretchConfig, setup, level: float, x_index: int, trial: int) -> StretchRecord:
    grid, kernel, a, b, target = setup
    x_norm = config.distances[x_index]
    # one stream per (distance, trial): levels share the field
    f = sample_field(grid, kernel, trial_rng(config.seed, (x_index << 32) | trial))
    es = excursion_set(f, level, FACE, UPPER)
    d = chemical_distance(es, a, b, with_path=False).length
    return StretchRecord(x_norm, math.isfinite(d), d, d / x_norm, level, config.delta, config.beta,
                         config.seed, trial, target)


def stretch_records(config: StretchConfig):
    """Yield one StretchRecord per (level, distance, trial), in that nesting order."""
    for level in config.levels:
        for xi, x_norm in enumerate(config.distances):
            setup = stretch_setup(config, x_norm)
            scale, clamped = schedule_scale(x_norm, config.beta, config.delta, config.dim, config.spacing)
            if clamped:
                log.info("schedule scale for |x|=%g clamped to 4h=%g", x_norm, scale)
            for t in range(config.trials):
                yield stretch_trial(config, setup, level, xi, t)


def stretch_experiment(config: StretchConfig) -> list[StretchRecord]:
    return list(stretch_records(config))


def stretch_summary(records, kappa: float | None = None) -> dict:
    """Per (level, distance): connection count, stretch quantiles, exceedance frequencies.

    Also fits an empirical decay exponent of the exceedance frequency in |x|
    when at least two distances have nonzero frequency.
    """
    groups: dict[tuple[float, float], list[StretchRecord]] = {}
    for r in records:
        groups.setdefault((r.level, r.x_norm), []).append(r)
    rows = []
    for (level, x), rs in sorted(groups.items()):
        conn = [r for r in rs if r.connected]
        stretches = np.array([r.stretch for r in conn])
        target = rs[0].kappa_target
        exceed = int(np.count_nonzero(stretches > target))
        row = {
            "level": level,
            "x_norm": x,
            "trials": len(rs),
            "connected": len(conn),
            "kappa_target": target,
            "exceed": exceed,
            "exceed_freq": exceed / len(rs),
            "exceed_freq_connected": exceed / len(conn) if conn else math.nan,
        }
        for q in (0.1, 0.5, 0.9):
            row[f"stretch_q{int(q * 100):02d}"] = float(np.quantile(stretches, q)) if conn else math.nan
        rows.append(row)
    fits = {}
    for level in sorted({r["level"] for r in rows}):
        pts = [(r["x_norm"], r["exceed_freq"]) for r in rows if r["level"] == level and r["exceed_freq"] > 0]
        if len(pts) >= 2:
            lx, lf = np.log(np.array(pts)).T
            slope = np.polyfit(lx, lf, 1)[0]
            fits[str(level)] = float(-slope)
        else:
            fits[str(level)] = None
    return {"rows": rows, "kappa": kappa, "fitted_kappa_prime": fits}
