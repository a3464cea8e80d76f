"""Coarse-grained site configurations and the discrete percolation tools used on them.

Site ``i`` of a coarse lattice owns the box ``(R/10) i + B_R`` of the
underlying field; it is open when the local-uniqueness event holds there.
On such {0,1} configurations this module provides the high-marginal
domination bound, Peierls-type closed-cluster tails and the constructive
search for a short open connected set passing near two sites.
"""
from __future__ import annotations

import base64
import json
import math
from dataclasses import dataclass, field as dc_field

import numpy as np
from scipy import ndimage

from . import _kernels
from ._kernels import FACE, STAR
from .errors import ConfigError
from .excursion import BoxSpec, excursion_set, local_uniqueness
from .field import BARGMANN_FOCK, Grid, discretize, make_kernel, sample_field
from .rng import as_generator
from .stats import wilson_interval

FIELD_DERIVED = "field-derived"


@dataclass(frozen=True, eq=False)
class SiteConfiguration:
    """{0,1} configuration on a box of sites; ``origin`` is the index of site 0."""

    omega: np.ndarray
    origin: tuple[int, ...] = None
    R: float | None = None
    provenance: str = "bernoulli"
    params: dict = dc_field(default_factory=dict)

    def __post_init__(self):
        om = np.array(self.omega, dtype=bool, copy=True)
        om.setflags(write=False)
        object.__setattr__(self, "omega", om)
        origin = (0,) * om.ndim if self.origin is None else tuple(int(o) for o in self.origin)
        if len(origin) != om.ndim:
            raise ValueError("origin needs one index per axis")
        object.__setattr__(self, "origin", origin)

    @property
    def dim(self) -> int:
        return self.omega.ndim

    @property
    def extent(self) -> tuple[int, ...]:
        return self.omega.shape

    @property
    def site_spacing(self) -> float | None:
        return None if self.R is None else self.R / 10

    def index(self, site) -> tuple[int, ...]:
        idx = tuple(int(o) + int(s) for o, s in zip(self.origin, site))
        if any(i < 0 or i >= n for i, n in zip(idx, self.extent)):
            raise ValueError(f"site {tuple(site)} lies outside the configuration")
        return idx

    def __eq__(self, other):
        if not isinstance(other, SiteConfiguration):
            return NotImplemented
        return (np.array_equal(self.omega, other.omega) and self.origin == other.origin
                and self.R == other.R and self.provenance == other.provenance and self.params == other.params)

    def to_json(self) -> str:
        bits = np.packbits(self.omega.ravel())
        doc = {
            "dim": self.dim,
            "extent": list(self.extent),
            "origin": list(self.origin),
            "R": self.R,
            "provenance": self.provenance,
            "params": self.params,
            "omega": base64.b64encode(bits.tobytes()).decode("ascii"),
        }
        return json.dumps(doc, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "SiteConfiguration":
        doc = json.loads(text)
        shape = tuple(doc["extent"])
        raw = np.frombuffer(base64.b64decode(doc["omega"]), dtype=np.uint8)
        om = np.unpackbits(raw, count=int(np.prod(shape))).astype(bool).reshape(shape)
        return cls(om, tuple(doc["origin"]), doc["R"], doc["provenance"], doc["params"])


def bernoulli_configuration(p: float, extent, rng, origin=None) -> SiteConfiguration:
    u = as_generator(rng).random(tuple(extent))
    return SiteConfiguration(u < p, origin, None, f"bernoulli({p!r})", {"p": p})


# ---------------------------------------------------------------------------
# coarse graining


def coarse_grain(R: float, level: float, extent, rng, kappa: float = 0.25, r: float | None = None,
                 eps: float | None = None, spacing: float = 0.25, kernel: str = BARGMANN_FOCK,
                 beta: float | None = None) -> SiteConfiguration:
    """omega_i = 1 iff the truncated, eps-discretized field satisfies local
    uniqueness in the box of site i.

    One field is sampled on a domain covering every enlarged site box. ``r``
    defaults to ``R`` and ``eps`` to the grid spacing.
    """
    extent = tuple(int(n) for n in extent)
    dim = len(extent)
    r = R if r is None else r
    eps = spacing if eps is None else eps
    step = R / 10
    if abs(step / spacing - round(step / spacing)) > 1e-9 or round(step / spacing) < 1:
        raise ConfigError("R", f"site spacing R/10={step} must be a multiple of h={spacing}")
    ksite = int(round(step / spacing))
    enlarged = R * (1 + kappa)
    # center on the h-lattice, half-width covering the far site plus its enlarged box
    mids = [(n - 1) * ksite // 2 for n in extent]
    center = [m * spacing for m in mids]
    half = [max(m, (n - 1) * ksite - m) * spacing + enlarged + spacing for m, n in zip(mids, extent)]
    grid = Grid.centered(dim, half, spacing, center)
    q = make_kernel(kernel, dim, beta, r)
    f = discretize(sample_field(grid, q, rng), eps)
    es = excursion_set(f, level)
    omega = np.zeros(extent, dtype=bool)
    for i in np.ndindex(*extent):
        c = [step * k for k in i]
        omega[i] = local_uniqueness(es, BoxSpec(c, R, kappa))
    params = {"level": level, "kappa": kappa, "r": r, "eps": eps, "spacing": spacing, "kernel": kernel,
              "beta": beta}
    return SiteConfiguration(omega, None, R, FIELD_DERIVED, params)


def dependence_range_sites(r: float, R: float, kappa: float = 0.25) -> int:
    """Site distance M beyond which enlarged boxes plus the kernel reach are r apart."""
    if not (r >= 0 and R > 0):
        raise ValueError("need r >= 0 and R > 0")
    return int(math.ceil((2 * R * (1 + kappa) + r) / (R / 10) - 1e-9))


def lss_alpha(p, M: int, d: int) -> float:
    """min(1, 4 (1 - p)^{1/(2M+1)^d}).

    ``p`` may be a ``fractions.Fraction`` so that 1 - p keeps precision near 1.
    """
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    if M < 0 or d < 1:
        raise ValueError("need M >= 0 and d >= 1")
    closed = float(1 - p)
    if closed == 0.0:
        return 0.0
    return min(1.0, 4.0 * closed ** (1.0 / (2 * M + 1) ** d))


# ---------------------------------------------------------------------------
# domination


def left_right_crossing(omega: np.ndarray) -> bool:
    """Open face-connected path between the first and last slabs along the last axis."""
    lab, _ = _kernels.label(omega, FACE)
    first = np.take(lab, 0, axis=-1)
    last = np.take(lab, -1, axis=-1)
    return bool(np.intersect1d(first[first > 0], last[last > 0]).size)


def origin_open(omega: np.ndarray) -> bool:
    return bool(omega[(0,) * omega.ndim])


@dataclass(frozen=True)
class DominationReport:
    p_mu: float
    p_pi: float
    q: float
    alpha: float
    p_hat: float
    M: int
    trials_mu: int
    trials_pi: int
    pooled_se: float
    wilson_mu: tuple[float, float]
    wilson_pi: tuple[float, float]

    @property
    def passed(self) -> bool:
        return self.p_mu >= self.p_pi - 3 * self.pooled_se


def check_increasing(event, extent, rng, samples=None, checks: int = 200) -> None:
    """Randomized spot check that flipping a closed site open never breaks ``event``."""
    rng = as_generator(rng)
    pool = list(samples or [])
    for k in range(checks):
        if pool and k % 2 == 0:
            om = np.array(pool[k // 2 % len(pool)], dtype=bool)
        else:
            om = rng.random(extent) < rng.random()
        closed = np.argwhere(~om)
        if closed.size == 0:
            continue
        flip = tuple(closed[rng.integers(len(closed))])
        before = event(om)
        om[flip] = True
        if before and not event(om):
            raise ValueError(f"event is not increasing: opening site {flip} destroyed it")


def domination_probe(mu_sampler, event, M: int, trials: int, rng, p_hat: float | None = None,
                     trials_pi: int | None = None) -> DominationReport:
    """Compare P_mu(event) with P_{pi_q}(event) at q = 1 - lss_alpha(p_hat, M, d).

    ``mu_sampler(rng)`` returns a boolean site array; ``p_hat`` defaults to
    the empirical open-site density of the mu samples.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    rng = as_generator(rng)
    mu = [np.asarray(mu_sampler(rng), dtype=bool) for _ in range(trials)]
    extent = mu[0].shape
    check_increasing(event, extent, rng, mu)
    if p_hat is None:
        p_hat = float(np.mean([m.mean() for m in mu]))
    alpha = lss_alpha(p_hat, M, len(extent))
    q = 1.0 - alpha
    n_pi = trials if trials_pi is None else trials_pi
    k_mu = sum(bool(event(m)) for m in mu)
    k_pi = sum(bool(event(rng.random(extent) < q)) for _ in range(n_pi))
    pm, pp = k_mu / trials, k_pi / n_pi
    se = math.sqrt(pm * (1 - pm) / trials + pp * (1 - pp) / n_pi)
    return DominationReport(pm, pp, q, alpha, p_hat, M, trials, n_pi, se,
                            wilson_interval(k_mu, trials), wilson_interval(k_pi, n_pi))


# ---------------------------------------------------------------------------
# closed clusters


def closed_cluster_tail(p: float, n_values, trials: int, rng, dim: int = 2, tilt: float | None = None,
                        batch: int = 20000) -> np.ndarray:
    """Estimates of P_p(|C_0| > n), C_0 the star-connected closed cluster of the origin.

    Without ``tilt`` these are plain frequencies. With ``tilt`` each new site
    closes with probability ``tilt`` during growth and outcomes are reweighted
    by the likelihood ratio, which resolves tails far below 1/trials.
    """
    n_values = np.asarray(n_values, dtype=np.int64)
    if trials < 1:
        raise ValueError("trials must be >= 1")
    if not 0 <= p <= 1:
        raise ValueError("p must lie in [0, 1]")
    q = 1.0 - p
    out = np.where(n_values < 0, 1.0, 0.0)
    if q == 0.0 or q == 1.0:
        return out if q == 0.0 else np.ones(len(n_values))
    cap = int(max(n_values.max(), 0)) + 1
    width = _kernels.growth_width(dim, cap)
    rng = as_generator(rng)
    acc = np.zeros(len(n_values))
    done = 0
    while done < trials:
        m = min(batch, trials - done)
        sizes, logw = _kernels.grow_closed_clusters(rng.random((m, width)), dim, cap, q, tilt)
        w = np.exp(logw)
        acc += np.array([np.sum(w * (sizes > n)) for n in n_values])
        done += m
    return np.where(n_values < 0, 1.0, acc / trials)


# ---------------------------------------------------------------------------
# global structures


CONDITIONS = ("open", "size", "connected", "dist0", "distx")


@dataclass(frozen=True, eq=False)
class GlobalStructure:
    sites: np.ndarray  # (k, d) site coordinates relative to site 0
    size: int
    dist0: int
    distx: int
    connected: bool


@dataclass(frozen=True)
class StructureResult:
    structure: GlobalStructure | None
    violation: str | None

    @property
    def found(self) -> bool:
        return self.structure is not None


def straight_path(x) -> np.ndarray:
    """Lattice path from 0 to x moving along axis 0 first, then axis 1, ..."""
    x = [int(v) for v in x]
    cur = [0] * len(x)
    pts = [tuple(cur)]
    for ax, target in enumerate(x):
        step = 1 if target > 0 else -1
        while cur[ax] != target:
            cur[ax] += step
            pts.append(tuple(cur))
    return np.array(pts, dtype=np.int64)


def log_radius(n1: int, delta: float) -> float:
    return math.log(n1) ** (1 + delta) if n1 > 1 else 0.0


def check_global_structure(config: SiteConfiguration, sites, x, C0: float = 9, delta: float = 0.5) -> str | None:
    """First violated defining condition of a global structure, or None."""
    sites = np.asarray(sites, dtype=np.int64).reshape(-1, config.dim)
    n1 = int(np.sum(np.abs(x)))
    if len(sites) == 0:
        return "open"
    idx = sites + np.array(config.origin)
    inside = np.all((idx >= 0) & (idx < np.array(config.extent)), axis=1)
    if not inside.all() or not config.omega[tuple(idx.T)].all():
        return "open"
    if len(np.unique(sites, axis=0)) > C0 * n1:
        return "size"
    lo = sites.min(0)
    mask = np.zeros(tuple(sites.max(0) - lo + 1), dtype=bool)
    mask[tuple((sites - lo).T)] = True
    _, count = _kernels.label(mask, FACE)
    if count != 1:
        return "connected"
    bound = log_radius(n1, delta)
    if np.abs(sites).sum(1).min() > bound + 1e-12:
        return "dist0"
    if np.abs(sites - np.asarray(x)).sum(1).min() > bound + 1e-12:
        return "distx"
    return None


def global_structure(config: SiteConfiguration, x, C0: float = 9, delta: float = 0.5) -> StructureResult:
    """Build the open outer layer of the closed-cluster hull around the straight
    path from 0 to x and test it against the defining conditions."""
    x = np.asarray(x, dtype=np.int64)
    if not np.any(x):
        raise ValueError("x must differ from 0")
    omega = config.omega
    o = np.array(config.origin)
    path = straight_path(x)
    pidx = path + o
    if np.any(pidx < 0) or np.any(pidx >= np.array(config.extent)):
        raise ValueError("the path from 0 to x leaves the configuration")
    closed_lab, _ = _kernels.label(~omega, STAR)
    on_path = np.unique(closed_lab[tuple(pidx.T)])
    clusters = np.isin(closed_lab, on_path[on_path > 0])
    hull = ndimage.binary_dilation(clusters, structure=np.ones((3,) * config.dim, dtype=bool))
    hull[tuple(pidx.T)] = True
    # exterior: complement component reaching outside the window
    padded = np.pad(~hull, 1, constant_values=True)
    comp, _ = _kernels.label(padded, FACE)
    exterior = comp == comp[(0,) * config.dim]
    # star contact keeps path sites that meet the exterior only diagonally;
    # closed cluster sites never qualify since their whole star lies in the hull
    touch = ndimage.binary_dilation(exterior, structure=np.ones((3,) * config.dim, dtype=bool))
    layer = touch[(slice(1, -1),) * config.dim] & hull
    lab, count = _kernels.label(layer, FACE)
    if count == 0:
        return StructureResult(None, "open")
    best, best_key = None, None
    for k in range(1, count + 1):
        cells = np.argwhere(lab == k) - o
        d0 = int(np.abs(cells).sum(1).min())
        dx = int(np.abs(cells - x).sum(1).min())
        key = (max(d0, dx), d0 + dx, tuple(cells[0]))
        if best_key is None or key < best_key:
            best, best_key = (cells, d0, dx), key
    cells, d0, dx = best
    violation = check_global_structure(config, cells, x, C0, delta)
    if violation is not None:
        return StructureResult(None, violation)
    return StructureResult(GlobalStructure(cells, len(cells), d0, dx, True), None)


def structure_window(x, delta: float) -> tuple[tuple[int, ...], tuple[int, ...]]:
    """(extent, origin) of the site window: path bounding box plus log^{1+delta}(N) + 2."""
    x = np.asarray(x, dtype=np.int64)
    pad = int(math.ceil(log_radius(int(np.abs(x).sum()), delta))) + 2
    lo = np.minimum(x, 0) - pad
    hi = np.maximum(x, 0) + pad
    return tuple(int(v) for v in hi - lo + 1), tuple(int(v) for v in -lo)


def structure_probability_scan(p_values, x_norms, trials: int, rng, C0: float = 9, delta: float = 0.5,
                               dim: int = 2) -> list[dict]:
    """Success frequency of global_structure per (p, |x|_1), x = (|x|_1, 0, ...).

    Within a trial all p values share one field of uniforms (site open iff
    U < p), so outcomes are coupled across p.
    """
    rng = as_generator(rng)
    ps = [float(p) for p in p_values]
    if any(not 0 < p <= 1 for p in ps):
        raise ValueError("p values must lie in (0, 1]")
    rows = []
    for n1 in x_norms:
        x = (int(n1),) + (0,) * (dim - 1)
        extent, origin = structure_window(x, delta)
        hits = np.zeros(len(ps), dtype=np.int64)
        for _ in range(trials):
            u = rng.random(extent)
            for j, p in enumerate(ps):
                res = global_structure(SiteConfiguration(u < p, origin), x, C0, delta)
                hits[j] += res.found
        for j, p in enumerate(ps):
            lo, hi = wilson_interval(hits[j], trials)
            rows.append({"p": p, "x_norm": int(n1), "trials": trials, "successes": int(hits[j]),
                         "wilson_low": lo, "wilson_high": hi})
    rows.sort(key=lambda r: (r["p"], r["x_norm"]))
    return rows
