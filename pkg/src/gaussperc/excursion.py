"""Excursion sets on grids: component labeling and box events.

Occupied cells of the upper set are ``f >= -level``; the lower set
``f <= -level`` is the dual. Components use face adjacency (2d neighbors) or
star adjacency (3^d - 1 neighbors). Boxes are ``center + [-R, R]^d`` in
physical units; a cell belongs to a box when its center does.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property
from typing import Callable

import numpy as np
from scipy import ndimage

from . import _kernels
from ._kernels import FACE, STAR
from .field import Grid, GridField, gradient, hessian
from .rng import trial_rng

UPPER = "upper"
LOWER = "lower"

# components above this size get a diameter bracket instead of an exact value
EXACT_DIAMETER_CELLS = 100_000


@dataclass(frozen=True)
class BoxSpec:
    center: tuple[float, ...]
    R: float
    kappa: float = 0.25

    def __post_init__(self):
        if not self.R > 1:
            raise ValueError(f"box half-side R must exceed 1, got {self.R}")
        if not 0 < self.kappa < 1:
            raise ValueError(f"kappa must lie in (0, 1), got {self.kappa}")
        object.__setattr__(self, "center", tuple(float(c) for c in self.center))

    @property
    def enlarged(self) -> float:
        return self.R * (1.0 + self.kappa)

    @property
    def threshold(self) -> float:
        """Diameter threshold kappa * R."""
        return self.kappa * self.R


def _pairwise_max(points: np.ndarray, chunk: int = 512) -> float:
    best = 0.0
    for i in range(0, len(points), chunk):
        block = points[i : i + chunk]
        d2 = np.sum((block[:, None, :] - points[None, :, :]) ** 2, axis=-1)
        best = max(best, float(d2.max()))
    return math.sqrt(best)


def _extreme_candidates(idx: np.ndarray) -> np.ndarray:
    """Cells that are first or last on every axis-parallel line through them.

    Every vertex of the convex hull of a lattice point set has this property,
    so the diameter is attained on the returned subset.
    """
    keep = np.ones(len(idx), dtype=bool)
    d = idx.shape[1]
    for ax in range(d):
        others = [k for k in range(d) if k != ax]
        key = np.ravel_multi_index(tuple(idx[:, others].T - idx[:, others].min(0)[:, None]),
                                   tuple(idx[:, others].max(0) - idx[:, others].min(0) + 1))
        order = np.lexsort((idx[:, ax], key))
        ks = key[order]
        first = np.ones(len(ks), dtype=bool)
        first[1:] = ks[1:] != ks[:-1]
        last = np.ones(len(ks), dtype=bool)
        last[:-1] = ks[1:] != ks[:-1]
        ext = np.zeros(len(idx), dtype=bool)
        ext[order[first | last]] = True
        keep &= ext
    return idx[keep]


def euclidean_diameter(indices: np.ndarray, spacing: float) -> float:
    """Exact max distance between cell centers, given integer cell indices."""
    idx = np.asarray(indices, dtype=np.int64)
    if len(idx) <= 1:
        return 0.0
    cand = _extreme_candidates(idx).astype(float)
    return spacing * _pairwise_max(cand)


@dataclass(eq=False)
class ExcursionSet:
    grid: Grid
    occupied: np.ndarray
    level: float
    adjacency: str = FACE
    side: str = UPPER
    backend: str | None = None

    def __post_init__(self):
        self.occupied = np.ascontiguousarray(self.occupied, dtype=bool)
        if self.occupied.shape != self.grid.shape:
            raise ValueError("occupancy shape does not match the grid")
        if self.adjacency not in (FACE, STAR):
            raise ValueError(f"unknown adjacency {self.adjacency!r}")
        self.labels, self.n_components = _kernels.label(self.occupied, self.adjacency, self.backend)

    # -- component table ------------------------------------------------
    @cached_property
    def sizes(self) -> np.ndarray:
        """Cell count per component; index 0 is background."""
        return np.bincount(self.labels.ravel(), minlength=self.n_components + 1)

    @cached_property
    def bboxes(self) -> list[tuple[slice, ...]]:
        """Bounding-box slices per component (list index = label - 1)."""
        return ndimage.find_objects(self.labels, max_label=self.n_components)

    def component_indices(self, lab: int) -> np.ndarray:
        sl = self.bboxes[lab - 1]
        local = np.argwhere(self.labels[sl] == lab)
        return local + np.array([s.start for s in sl])

    def diameter_bracket(self, lab: int) -> tuple[float, float]:
        """(lower, upper) bounds: longest bbox side and bbox diagonal, physical units."""
        sl = self.bboxes[lab - 1]
        ext = np.array([s.stop - s.start - 1 for s in sl], dtype=float) * self.grid.spacing
        return float(ext.max()), float(np.sqrt(np.sum(ext * ext)))

    def diameter(self, lab: int) -> float:
        lo, hi = self.diameter_bracket(lab)
        if lo == hi:
            return lo
        return euclidean_diameter(self.component_indices(lab), self.grid.spacing)

    def diameter_at_least(self, lab: int, threshold: float) -> bool:
        lo, hi = self.diameter_bracket(lab)
        if lo >= threshold:
            return True
        if hi < threshold:
            return False
        return self.diameter(lab) >= threshold

    def component_table(self) -> list[dict]:
        rows = []
        for lab in range(1, self.n_components + 1):
            lo, hi = self.diameter_bracket(lab)
            size = int(self.sizes[lab])
            if size <= EXACT_DIAMETER_CELLS:
                diam, exact = self.diameter(lab), True
            else:
                diam, exact = lo, False
            sl = self.bboxes[lab - 1]
            rows.append({
                "label": lab,
                "cells": size,
                "bbox_lo": tuple(s.start for s in sl),
                "bbox_hi": tuple(s.stop - 1 for s in sl),
                "diameter": diam,
                "diameter_upper": diam if exact else hi,
                "exact": exact,
            })
        return rows

    def max_diameter(self) -> float:
        if self.n_components == 0:
            return 0.0
        # only components whose bbox diagonal can beat the current best need exact work
        brackets = [self.diameter_bracket(l) for l in range(1, self.n_components + 1)]
        order = np.argsort([-b[1] for b in brackets])
        best = 0.0
        for i in order:
            lo, hi = brackets[i]
            if hi <= best:
                break
            best = max(best, self.diameter(int(i) + 1))
        return best

    # -- restriction ----------------------------------------------------
    def restrict(self, center, half_side: float) -> "ExcursionSet":
        """The set intersected with a box, relabeled inside the box."""
        sl = self.grid.box_slices(center, half_side)
        sub = self._subgrid(sl)
        return ExcursionSet(sub, self.occupied[sl], self.level, self.adjacency, self.side, self.backend)

    def _subgrid(self, sl) -> Grid:
        ext = tuple(s.stop - s.start for s in sl)
        mid = [s.start + n // 2 for s, n in zip(sl, ext)]
        return Grid(self.grid.dim, ext, self.grid.spacing, tuple(self.grid.point(mid)))

    def box_offset(self, center, half_side: float) -> tuple[int, ...]:
        return tuple(s.start for s in self.grid.box_slices(center, half_side))


def excursion_set(field: GridField, level: float, adjacency: str = FACE, side: str = UPPER,
                  backend: str | None = None) -> ExcursionSet:
    """Upper set ``{f >= -level}`` (or lower set ``{f <= -level}``) of a field."""
    if not math.isfinite(level):
        raise ValueError("level must be finite")
    vals = np.asarray(field.values)
    if side == UPPER:
        occ = vals >= -level
    elif side == LOWER:
        occ = vals <= -level
    else:
        raise ValueError(f"side must be {UPPER!r} or {LOWER!r}")
    return ExcursionSet(field.grid, occ, float(level), adjacency, side, backend)


# ---------------------------------------------------------------------------
# box events


def _check_fits(es: ExcursionSet, center, half: float) -> None:
    if not es.grid.box_fits(center, half):
        raise ValueError(f"box of half-side {half} around {tuple(center)} leaves the grid domain")


def exist_event(es: ExcursionSet, box: BoxSpec) -> bool:
    """Every axis has a component of set ∩ B_R touching both opposite faces."""
    _check_fits(es, box.center, box.R)
    inner = es.restrict(box.center, box.R)
    if inner.n_components == 0:
        return False
    lab = inner.labels
    for ax in range(lab.ndim):
        lo = np.take(lab, 0, axis=ax)
        hi = np.take(lab, -1, axis=ax)
        common = np.intersect1d(lo[lo > 0], hi[hi > 0])
        if common.size == 0:
            return False
    return True


def unique_event(es: ExcursionSet, box: BoxSpec) -> bool:
    """Components of set ∩ B_R with diameter >= kappa R all join inside B_{R(1+kappa)}."""
    _check_fits(es, box.center, box.enlarged)
    inner = es.restrict(box.center, box.R)
    if inner.n_components <= 1:
        return True
    outer = es.restrict(box.center, box.enlarged)
    off = np.array(outer.box_offset(box.center, box.R))
    # where each inner component lands in the enlarged box
    labs, first = np.unique(inner.labels.ravel(), return_index=True)
    keep = labs > 0
    labs, first = labs[keep], first[keep]
    pos = np.array(np.unravel_index(first, inner.labels.shape)).T + off
    big = outer.labels[tuple(pos.T)]
    if np.unique(big).size <= 1:
        return True
    thr = box.threshold
    groups_with_large = set()
    for lab, b in zip(labs, big):
        if b in groups_with_large:
            continue
        if inner.diameter_at_least(int(lab), thr):
            groups_with_large.add(int(b))
            if len(groups_with_large) > 1:
                return False
    return True


def local_uniqueness(es: ExcursionSet, box: BoxSpec) -> bool:
    return exist_event(es, box) and unique_event(es, box)


def small_clusters_property(es: ExcursionSet, box: BoxSpec) -> bool:
    """Every component of set ∩ B_{R(1+kappa)} has diameter < kappa R."""
    _check_fits(es, box.center, box.enlarged)
    outer = es.restrict(box.center, box.enlarged)
    thr = box.threshold
    for lab in range(1, outer.n_components + 1):
        if outer.diameter_at_least(lab, thr):
            return False
    return True


# ---------------------------------------------------------------------------
# crossings and duality


def crossing_radii(es: ExcursionSet, radii, center=None) -> np.ndarray:
    """For each R, whether one component of set ∩ B_R meets both B_1 and ∂B_R.

    Labels once in the largest box: a path leaving B_R first hits its outer
    layer while still inside, so reaching that layer within the big box is
    the same event as crossing within B_R.
    """
    radii = np.atleast_1d(np.asarray(radii, dtype=float))
    grid = es.grid
    center = grid.origin if center is None else center
    rmax = float(radii.max())
    _check_fits(es, center, rmax)
    box = es.restrict(center, rmax)
    c = np.array(box.grid.center_index)
    h = grid.spacing
    lab = box.labels
    core = lab[box.grid.box_slices(box.grid.origin, 1.0)]
    seeds = np.unique(core[core > 0])
    out = np.zeros(len(radii), dtype=bool)
    if seeds.size == 0:
        return out
    idx = np.indices(lab.shape)
    cheb = np.max(np.abs(idx - c.reshape((-1,) + (1,) * lab.ndim)), axis=0)
    reach = int(cheb[np.isin(lab, seeds)].max())
    for i, R in enumerate(radii):
        layer = int(math.floor(R / h + 1e-9))
        out[i] = reach >= layer
    return out


def crossing_probe(sampler: Callable, level: float, R, trials: int, side: str = LOWER,
                   seed: int = 0, adjacency: str = FACE) -> np.ndarray | float:
    """Empirical frequency of ``B_1 <-> ∂B_R`` in the chosen level set.

    ``sampler(rng)`` returns a field whose grid is centered at the origin and
    covers B_R. ``R`` may be a list, in which case all radii are evaluated on
    the same samples.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    radii = np.atleast_1d(np.asarray(R, dtype=float))
    if np.any(radii < 2):
        raise ValueError("R must be >= 2")
    hits = np.zeros(len(radii))
    for t in range(trials):
        f = sampler(trial_rng(seed, t))
        es = excursion_set(f, level, adjacency, side)
        hits += crossing_radii(es, radii)
    freq = hits / trials
    return float(freq[0]) if np.ndim(R) == 0 else freq


@dataclass(frozen=True)
class DualityReport:
    antecedent: bool
    consequent: bool
    unique: bool
    exist: bool

    @property
    def violated(self) -> bool:
        return self.antecedent and not self.consequent


def duality_check(field: GridField, box: BoxSpec, level: float, backend: str | None = None) -> DualityReport:
    """Small clusters of the lower set (star) should force unique + crossing of
    the upper set (face)."""
    lower = excursion_set(field, level, STAR, LOWER, backend)
    upper = excursion_set(field, level, FACE, UPPER, backend)
    ante = small_clusters_property(lower, box)
    uniq = unique_event(upper, box)
    ex = exist_event(upper, box)
    return DualityReport(ante, uniq and ex, uniq, ex)


# ---------------------------------------------------------------------------
# regularity


def certified_box_size(lam: float, k: float, dim: int) -> float:
    """Implicit-function box size lam^2 / (4 k^2 d^{3/2}); 0 unless k > lam > 0.

    ``k`` within a relative 1e-9 of ``lam`` counts as equal, so finite-difference
    round-off on exactly linear inputs does not certify a box.
    """
    if not (lam > 0 and k > lam * (1.0 + 1e-9)):
        return 0.0
    return lam * lam / (4.0 * k * k * dim ** 1.5)


@dataclass(frozen=True)
class RegularityProbe:
    lam: float
    k: float
    certified_eps: float
    degenerate: bool = False
    k_le_lambda: bool = False
    near_level_cells: int = 0


def regularity_probe(field: GridField, box: BoxSpec, level: float) -> RegularityProbe:
    """Gradient non-degeneracy near the level set and the C^1 norm of df in a box.

    ``lam`` is the smallest gradient norm over cells with
    ``|f + level| <= h * max|grad f|``; ``k`` is max |grad f| plus the max
    Hessian operator norm over the box.
    """
    grid = field.grid
    sl = grid.box_slices(box.center, box.R)
    for s, n in zip(sl, grid.extent):
        if s.start < 1 or s.stop > n - 1:
            raise ValueError("regularity probe needs a one-cell margin around the box")
    grad = gradient(field)
    hess = hessian(field)
    gnorm = np.sqrt(np.sum(grad * grad, axis=0))[sl]
    hbox = np.moveaxis(hess[(slice(None), slice(None)) + sl], (0, 1), (-2, -1))
    hop = float(np.max(np.abs(np.linalg.eigvalsh(hbox)))) if hbox.size else 0.0
    gmax = float(gnorm.max())
    k = gmax + hop
    near = np.abs(np.asarray(field.values)[sl] + level) <= grid.spacing * gmax
    n_near = int(np.count_nonzero(near))
    if n_near == 0:
        return RegularityProbe(math.inf, k, 0.0, False, False, 0)
    lam = float(gnorm[near].min())
    if lam == 0.0:
        return RegularityProbe(0.0, k, 0.0, True, False, n_near)
    eps = certified_box_size(lam, k, grid.dim)
    return RegularityProbe(lam, k, eps, False, eps == 0.0, n_near)
