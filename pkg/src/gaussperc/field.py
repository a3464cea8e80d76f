"""Stationary Gaussian fields on regular grids by discrete white-noise convolution.

A field is ``f(x_i) = h^{d/2} * sum_j q(x_i - x_j) xi_j`` with iid standard
normal ``xi_j`` on the grid cells, which converges in law to ``q * W`` as the
spacing ``h`` goes to zero. Kernels are isotropic and nonnegative; the optional
truncation multiplies ``q`` by a smooth bump that vanishes outside radius r/2,
which makes the field r-dependent.
"""
from __future__ import annotations

import json
import logging
import math
import struct
from dataclasses import dataclass, field as dc_field
from pathlib import Path

import numpy as np
from scipy import integrate, signal, special

from .errors import ConfigError, check_budget
from .rng import as_generator

log = logging.getLogger(__name__)

BARGMANN_FOCK = "bargmann-fock"
POLYNOMIAL = "polynomial-decay"
KERNEL_KINDS = (BARGMANN_FOCK, POLYNOMIAL)

WHITE_NOISE = "white-noise"
SMOOTH = "smooth"
BLOCK_CONSTANT = "block-constant"
FIELD_KINDS = (WHITE_NOISE, SMOOTH, BLOCK_CONSTANT)

# profile cut-off for untruncated kernels, relative to the peak
SUPPORT_REL_TOL = 1e-12

MAGIC = b"GPF1"


@dataclass(frozen=True)
class Grid:
    """Regular lattice; ``origin`` is the physical position of the center cell
    (index ``extent // 2`` on every axis)."""

    dim: int
    extent: tuple[int, ...]
    spacing: float
    origin: tuple[float, ...] = None

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise ConfigError("dim", f"must be 2 or 3, got {self.dim}")
        ext = tuple(int(n) for n in self.extent)
        if len(ext) != self.dim or any(n < 2 for n in ext):
            raise ConfigError("extent", f"need {self.dim} axis counts >= 2, got {self.extent}")
        if not (math.isfinite(self.spacing) and self.spacing > 0):
            raise ConfigError("spacing", f"must be finite and positive, got {self.spacing}")
        origin = (0.0,) * self.dim if self.origin is None else tuple(float(o) for o in self.origin)
        if len(origin) != self.dim:
            raise ConfigError("origin", f"need {self.dim} coordinates")
        object.__setattr__(self, "extent", ext)
        object.__setattr__(self, "spacing", float(self.spacing))
        object.__setattr__(self, "origin", origin)

    @classmethod
    def centered(cls, dim: int, half_width, spacing: float, center=None) -> "Grid":
        """Smallest odd-sided grid whose cells cover [c - w, c + w] on each axis."""
        hw = np.broadcast_to(np.asarray(half_width, dtype=float), (dim,))
        ext = tuple(2 * int(math.ceil(w / spacing - 1e-9)) + 1 for w in hw)
        return cls(dim, ext, spacing, center)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.extent

    @property
    def n_cells(self) -> int:
        return int(np.prod(self.extent))

    @property
    def center_index(self) -> tuple[int, ...]:
        return tuple(n // 2 for n in self.extent)

    def axis_coords(self, axis: int) -> np.ndarray:
        n = self.extent[axis]
        return self.origin[axis] + self.spacing * (np.arange(n) - n // 2)

    def point(self, index) -> np.ndarray:
        idx = np.asarray(index, dtype=float)
        return np.asarray(self.origin) + self.spacing * (idx - np.asarray(self.center_index))

    def index_of(self, point) -> tuple[int, ...]:
        """Nearest cell to a physical point; raises if it falls off the grid."""
        p = np.asarray(point, dtype=float)
        idx = np.rint((p - np.asarray(self.origin)) / self.spacing).astype(int) + np.asarray(self.center_index)
        if np.any(idx < 0) or np.any(idx >= np.asarray(self.extent)):
            raise ValueError(f"point {tuple(p)} lies outside the grid")
        return tuple(int(i) for i in idx)

    def box_slices(self, center, half_side: float) -> tuple[slice, ...]:
        """Index slices of the cells whose centers lie in ``center + [-R, R]^d``."""
        c = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,))
        out = []
        tol = 1e-9 * self.spacing
        for ax in range(self.dim):
            x = self.axis_coords(ax)
            inside = np.nonzero(np.abs(x - c[ax]) <= half_side + tol)[0]
            if inside.size == 0:
                raise ValueError(f"box around {tuple(c)} of half-side {half_side} misses the grid")
            out.append(slice(int(inside[0]), int(inside[-1]) + 1))
        return tuple(out)

    def box_fits(self, center, half_side: float) -> bool:
        c = np.broadcast_to(np.asarray(center, dtype=float), (self.dim,))
        tol = 1e-9 * self.spacing
        for ax in range(self.dim):
            x = self.axis_coords(ax)
            if c[ax] - half_side < x[0] - tol or c[ax] + half_side > x[-1] + tol:
                return False
        return True

    def expanded(self, cells: int) -> "Grid":
        return Grid(self.dim, tuple(n + 2 * cells for n in self.extent), self.spacing, self.origin)

    def to_dict(self) -> dict:
        return {"dim": self.dim, "extent": list(self.extent), "spacing": self.spacing, "origin": list(self.origin)}


@dataclass(frozen=True)
class GridField:
    grid: Grid
    values: np.ndarray
    kind: str = SMOOTH
    block: int = 1

    def __post_init__(self):
        vals = np.array(self.values, dtype=np.float64, copy=True)
        if vals.shape != self.grid.shape:
            raise ValueError(f"values shape {vals.shape} != grid shape {self.grid.shape}")
        if not np.all(np.isfinite(vals)):
            raise ValueError("field values must be finite")
        if self.kind not in FIELD_KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __array__(self, dtype=None, copy=None):
        return self.values if dtype is None else self.values.astype(dtype)


# ---------------------------------------------------------------------------
# kernels


def bump(t) -> np.ndarray:
    """Smooth radial cut-off: 1 for t <= 1/4, 0 for t >= 1/2."""
    t = np.asarray(t, dtype=float)
    u = np.clip((0.5 - t) / 0.25, 0.0, 1.0)

    def g(s):
        with np.errstate(divide="ignore", over="ignore"):
            return np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)

    a = g(u)
    b = g(1.0 - u)
    return a / (a + b)


@dataclass(frozen=True)
class Kernel:
    kind: str
    dim: int
    beta: float | None = None
    truncation: float | None = None
    amplitude: float = dc_field(default=1.0, compare=False)

    def profile(self, radius) -> np.ndarray:
        r = np.asarray(radius, dtype=float)
        if self.kind == BARGMANN_FOCK:
            q = self.amplitude * np.exp(-r * r)
        else:
            q = self.amplitude * (1.0 + r * r) ** (-self.beta / 2.0)
        if self.truncation is not None:
            q = q * bump(r / self.truncation)
        return q

    def __call__(self, x) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        return self.profile(np.sqrt(np.sum(x * x, axis=-1)))

    @property
    def support_radius(self) -> float:
        """Radius beyond which the profile is zero (truncated) or < 1e-12 of the peak."""
        if self.truncation is not None:
            natural = _natural_support(self)
            return min(self.truncation / 2.0, natural)
        return _natural_support(self)


def _natural_support(k: Kernel) -> float:
    if k.kind == BARGMANN_FOCK:
        return math.sqrt(-math.log(SUPPORT_REL_TOL))
    return math.sqrt(SUPPORT_REL_TOL ** (-2.0 / k.beta) - 1.0)


def _sphere_area(dim: int) -> float:
    return 2.0 * math.pi ** (dim / 2) / special.gamma(dim / 2)


def radial_l2_norm_sq(profile, dim: int, upper: float = math.inf) -> float:
    """Integral of profile(|x|)^2 over R^d, by 1-d radial quadrature."""
    val, _ = integrate.quad(lambda r: r ** (dim - 1) * profile(r) ** 2, 0.0, upper, limit=400, epsabs=1e-14, epsrel=1e-12)
    return _sphere_area(dim) * val


def make_kernel(kind: str, dim: int = 2, beta: float | None = None, truncation: float | None = None) -> Kernel:
    """Build an isotropic nonnegative kernel.

    ``bargmann-fock`` is ``(2/pi)^{d/4} exp(-|x|^2)``; ``polynomial-decay`` is
    ``(1 + |x|^2)^{-beta/2}`` scaled so that ``(q*q)(0) = 1``.
    """
    if kind not in KERNEL_KINDS:
        raise ConfigError("kernel", f"unknown kind {kind!r}")
    if dim not in (2, 3):
        raise ConfigError("dim", f"must be 2 or 3, got {dim}")
    if truncation is not None and not truncation > 1:
        raise ConfigError("truncation", f"must exceed 1, got {truncation}")
    if kind == BARGMANN_FOCK:
        return Kernel(kind, dim, None if beta is None else float(beta), truncation, (2.0 / math.pi) ** (dim / 4.0))
    if beta is None or not beta > dim:
        raise ConfigError("beta", f"polynomial kernels need beta > dim={dim}, got {beta}")
    raw = Kernel(kind, dim, float(beta), None, 1.0)
    norm = radial_l2_norm_sq(raw.profile, dim)
    return Kernel(kind, dim, float(beta), truncation, 1.0 / math.sqrt(norm))


def kernel_array(kernel: Kernel, spacing: float) -> np.ndarray:
    """Kernel sampled at lattice offsets ``j * h`` for ``|j_i| <= ceil(support / h)``."""
    k = int(math.ceil(kernel.support_radius / spacing - 1e-9))
    axes = np.arange(-k, k + 1) * spacing
    mesh = np.meshgrid(*([axes] * kernel.dim), indexing="ij")
    r = np.sqrt(sum(m * m for m in mesh))
    return kernel.profile(r)


# ---------------------------------------------------------------------------
# sampling


def sample_white_noise(grid: Grid, rng) -> GridField:
    """iid N(0,1) per cell; the h^{d/2} scaling is applied by ``convolve_field``."""
    gen = as_generator(rng)
    return GridField(grid, gen.standard_normal(grid.shape), WHITE_NOISE)


def convolve_field(noise: GridField, kernel) -> GridField:
    """Linear (non-circular) convolution of white noise with a kernel.

    ``kernel`` is a :class:`Kernel` or an odd-sided array of lattice weights.
    The output lives on the noise grid; cells within the kernel radius of the
    edge miss the noise beyond it, so callers wanting a stationary field use
    :func:`sample_field`, which samples a margin and crops it away.
    """
    if noise.kind != WHITE_NOISE:
        raise ValueError("convolve_field expects a white-noise field")
    grid = noise.grid
    arr = kernel_array(kernel, grid.spacing) if isinstance(kernel, Kernel) else np.asarray(kernel, dtype=float)
    if arr.ndim != grid.dim or any(n % 2 == 0 for n in arr.shape):
        raise ValueError("kernel array must have odd sides and the grid's dimension")
    radius = arr.shape[0] // 2
    padded = [n + 2 * radius for n in grid.shape]
    check_budget(int(np.prod(padded)), "padded convolution")
    for n_pad, n_k in zip(padded, arr.shape):
        if n_k > n_pad / 2:
            raise ValueError(
                f"kernel support ({n_k} cells) exceeds half the padded domain ({n_pad} cells)"
            )
    if radius > 0:
        log.debug("convolution padding %d cells/side, %d padded cells", radius, int(np.prod(padded)))
    scale = grid.spacing ** (grid.dim / 2.0)
    out = scale * signal.fftconvolve(noise.values, arr, mode="same")
    return GridField(grid, out, SMOOTH)


def sample_field(grid: Grid, kernel: Kernel, rng) -> GridField:
    """Stationary sample of ``q * W`` on ``grid``: the noise covers a margin of
    one kernel radius on every side, which is cropped after convolution."""
    arr = kernel_array(kernel, grid.spacing)
    k = arr.shape[0] // 2
    big = grid.expanded(k)
    check_budget(big.n_cells, "noise grid")
    noise = sample_white_noise(big, rng)
    full = convolve_field(noise, arr)
    crop = tuple(slice(k, k + n) for n in grid.shape)
    return GridField(grid, full.values[crop], SMOOTH)


# ---------------------------------------------------------------------------
# covariance oracle


def _gl_nodes(lo: float, hi: float, panels: int, order: int) -> tuple[np.ndarray, np.ndarray]:
    x, w = np.polynomial.legendre.leggauss(order)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    nodes = (mid[:, None] + half[:, None] * x[None, :]).ravel()
    weights = (half[:, None] * w[None, :]).ravel()
    return nodes, weights


def covariance_exact(kernel: Kernel, displacement, method: str = "auto") -> float:
    """``(q * q)(v)``: closed form for untruncated Bargmann-Fock, otherwise a
    tensor Gauss-Legendre quadrature of the convolution integral.

    ``method="quadrature"`` forces the quadrature path even where the closed
    form applies.
    """
    v = np.broadcast_to(np.asarray(displacement, dtype=float), (kernel.dim,))
    if not np.all(np.isfinite(v)):
        raise ValueError("displacement must be finite")
    if method == "auto" and kernel.kind == BARGMANN_FOCK and kernel.truncation is None:
        return float(math.exp(-0.5 * float(v @ v)))
    d = kernel.dim
    if kernel.truncation is not None or kernel.kind == BARGMANN_FOCK:
        s = kernel.support_radius
        panels, order = (48, 10) if d == 2 else (16, 8)
        # integrate q(x) q(x - v) over the box holding supp q(.) around 0 and v/2
        axes = []
        for ax in range(d):
            lo = min(-s, v[ax] - s)
            hi = max(s, v[ax] + s)
            axes.append(_gl_nodes(lo, hi, panels, order))
    else:
        panels, order = (40, 10) if d == 2 else (12, 8)
        axes = []
        for ax in range(d):
            t, w = _gl_nodes(-math.pi / 2, math.pi / 2, panels, order)
            axes.append((np.tan(t) + v[ax] / 2.0, w / np.cos(t) ** 2))
    total = 0.0
    # slice over the first axis to bound memory
    rest_nodes = np.meshgrid(*[a[0] for a in axes[1:]], indexing="ij")
    rest_w = np.ones_like(rest_nodes[0])
    wmesh = np.meshgrid(*[a[1] for a in axes[1:]], indexing="ij")
    for wm in wmesh:
        rest_w = rest_w * wm
    rest_sq = sum(m * m for m in rest_nodes)
    rest_sq_shift = sum((m - v[k + 1]) ** 2 for k, m in enumerate(rest_nodes))
    for x0, w0 in zip(*axes[0]):
        r1 = np.sqrt(x0 * x0 + rest_sq)
        r2 = np.sqrt((x0 - v[0]) ** 2 + rest_sq_shift)
        total += w0 * float(np.sum(rest_w * kernel.profile(r1) * kernel.profile(r2)))
    return total


# ---------------------------------------------------------------------------
# discretization and probes


def _integer_origin(grid: Grid) -> np.ndarray:
    o = np.asarray(grid.origin) / grid.spacing
    if not np.allclose(o, np.rint(o), atol=1e-9):
        raise ConfigError("origin", "grid origin must lie on the h-lattice to discretize")
    return np.rint(o).astype(np.int64)


def discretize(field: GridField, eps: float) -> GridField:
    """Block-constant version of ``field``: each cell takes the value at the
    eps-lattice point y with x in y + [-eps/2, eps/2)^d.

    Blocks cut by the grid edge take the value of the nearest in-grid cell to y.
    """
    grid = field.grid
    ratio = eps / grid.spacing
    m = int(round(ratio))
    if m < 1 or abs(ratio - m) > 1e-9 * max(1.0, ratio):
        raise ConfigError("eps", f"{eps} is not a positive integer multiple of h={grid.spacing}")
    if any(m > n for n in grid.extent):
        raise ConfigError("eps", f"{eps} exceeds the domain side")
    if m == 1:
        return GridField(grid, field.values, BLOCK_CONSTANT, 1)
    o = _integer_origin(grid)
    index = []
    for ax, n in enumerate(grid.extent):
        g = o[ax] + np.arange(n) - n // 2  # global lattice coordinate in cells
        k = (2 * g + m) // (2 * m)
        src = k * m - o[ax] + n // 2
        index.append(np.clip(src, 0, n - 1))
    vals = field.values[np.ix_(*index)]
    return GridField(grid, vals, BLOCK_CONSTANT, m)


def sup_difference(a: GridField, b: GridField, center, half_side: float) -> float:
    """max |a - b| over the cells of the box ``center + [-R, R]^d``."""
    if a.grid != b.grid:
        raise ValueError("fields live on different grids")
    sl = a.grid.box_slices(center, half_side)
    return float(np.max(np.abs(a.values[sl] - b.values[sl])))


def gradient(field: GridField) -> np.ndarray:
    """Finite-difference gradient, shape (d, *grid): central inside, one-sided at edges."""
    g = np.gradient(field.values, field.grid.spacing, edge_order=1)
    return np.stack(g if isinstance(g, (list, tuple)) else [g])


def hessian(field: GridField) -> np.ndarray:
    """Finite-difference Hessian, shape (d, d, *grid), symmetrized."""
    h = field.grid.spacing
    grads = gradient(field)
    rows = [np.stack(np.gradient(gi, h, edge_order=1)) for gi in grads]
    hess = np.stack(rows)
    return 0.5 * (hess + np.swapaxes(hess, 0, 1))


# ---------------------------------------------------------------------------
# serialization


def save_gridfield(field: GridField, path) -> tuple[Path, Path]:
    """Write ``<path>`` (binary GPF1 container) and ``<path>.json`` (metadata)."""
    path = Path(path)
    g = field.grid
    header = MAGIC + struct.pack("<I", g.dim) + struct.pack(f"<{g.dim}Q", *g.extent)
    header += struct.pack("<d", g.spacing) + struct.pack(f"<{g.dim}d", *g.origin)
    body = np.ascontiguousarray(field.values, dtype="<f8").tobytes(order="C")
    path.write_bytes(header + body)
    meta = {**g.to_dict(), "kind": field.kind, "block": field.block, "dtype": "float64-le", "order": "row-major"}
    side = path.with_name(path.name + ".json")
    side.write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
    return path, side


def load_gridfield(path) -> GridField:
    path = Path(path)
    raw = path.read_bytes()
    if raw[:4] != MAGIC:
        raise ValueError(f"{path}: bad magic {raw[:4]!r}")
    (dim,) = struct.unpack_from("<I", raw, 4)
    off = 8
    extent = struct.unpack_from(f"<{dim}Q", raw, off)
    off += 8 * dim
    (spacing,) = struct.unpack_from("<d", raw, off)
    off += 8
    origin = struct.unpack_from(f"<{dim}d", raw, off)
    off += 8 * dim
    vals = np.frombuffer(raw, dtype="<f8", offset=off).reshape(extent)
    kind, block = SMOOTH, 1
    side = path.with_name(path.name + ".json")
    if side.exists():
        meta = json.loads(side.read_text())
        kind, block = meta.get("kind", SMOOTH), int(meta.get("block", 1))
    return GridField(Grid(dim, extent, spacing, origin), vals.astype(np.float64), kind, block)
