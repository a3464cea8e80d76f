"""Hot lattice kernels: component labeling, breadth-first distances, batched
cluster growth.

Every kernel exists twice: a numba ``@njit`` version and a vectorized numpy
version. ``GAUSSPERC_BACKEND=numpy`` in the environment forces the numpy path;
otherwise numba is used when importable. Both paths return identical arrays
(labels are canonical: numbered 1.. in raster order of each component's first
cell), so tests compare them directly.
"""
from __future__ import annotations

import itertools
import math
import os

import numpy as np

try:
    import numba

    HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    HAVE_NUMBA = False


def _default_backend() -> str:
    env = os.environ.get("GAUSSPERC_BACKEND", "").strip().lower()
    if env in ("numpy", "python", "0", "off"):
        return "numpy"
    return "numba" if HAVE_NUMBA else "numpy"


BACKEND = _default_backend()

FACE = "face"
STAR = "star"


def resolve_backend(backend: str | None) -> str:
    b = BACKEND if backend is None else backend
    if b not in ("numba", "numpy"):
        raise ValueError(f"unknown backend {b!r}")
    if b == "numba" and not HAVE_NUMBA:
        raise RuntimeError("numba backend requested but numba is not importable")
    return b


def neighbor_vectors(dim: int, adjacency: str) -> np.ndarray:
    """Integer offset vectors of the face (2d) or star (3^d - 1) neighborhood."""
    if adjacency == FACE:
        eye = np.eye(dim, dtype=np.int64)
        return np.concatenate([eye, -eye])
    if adjacency == STAR:
        vecs = [v for v in itertools.product((-1, 0, 1), repeat=dim) if any(v)]
        return np.array(vecs, dtype=np.int64)
    raise ValueError(f"unknown adjacency {adjacency!r}")


def _flat_offsets(shape: tuple[int, ...], vectors: np.ndarray) -> np.ndarray:
    strides = np.ones(len(shape), dtype=np.int64)
    for k in range(len(shape) - 2, -1, -1):
        strides[k] = strides[k + 1] * shape[k + 1]
    return vectors @ strides


def _pad(mask: np.ndarray) -> np.ndarray:
    return np.pad(np.ascontiguousarray(mask, dtype=np.bool_), 1, constant_values=False)


def _crop(a: np.ndarray) -> np.ndarray:
    return a[(slice(1, -1),) * a.ndim]


# ---------------------------------------------------------------------------
# numba implementations

if HAVE_NUMBA:

    @numba.njit(cache=True, nogil=True)
    def _find(parent, i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    @numba.njit(cache=True, nogil=True)
    def _uf_label_nb(mask, back_offsets):
        n = mask.size
        parent = np.empty(n, dtype=np.int64)
        for i in range(n):
            parent[i] = i
        for i in range(n):
            if not mask[i]:
                continue
            for off in back_offsets:
                j = i + off
                if mask[j]:
                    ri = _find(parent, i)
                    rj = _find(parent, j)
                    if ri != rj:
                        if ri < rj:
                            parent[rj] = ri
                        else:
                            parent[ri] = rj
        labels = np.zeros(n, dtype=np.int64)
        nxt = 1
        for i in range(n):
            if mask[i]:
                r = _find(parent, i)
                if labels[r] == 0:
                    labels[r] = nxt
                    nxt += 1
                labels[i] = labels[r]
        return labels, nxt - 1

    @numba.njit(cache=True, nogil=True)
    def _bfs_nb(mask, offsets, sources):
        n = mask.size
        dist = np.full(n, -1, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        head = 0
        tail = 0
        for s in sources:
            if mask[s] and dist[s] < 0:
                dist[s] = 0
                queue[tail] = s
                tail += 1
        while head < tail:
            i = queue[head]
            head += 1
            d = dist[i] + 1
            for off in offsets:
                j = i + off
                if mask[j] and dist[j] < 0:
                    dist[j] = d
                    queue[tail] = j
                    tail += 1
        return dist

    @numba.njit(cache=True, nogil=True)
    def _ecc_nb(mask, offsets, sources, targets):
        n = mask.size
        out = np.full(len(sources), -1, dtype=np.int64)
        dist = np.full(n, -1, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        for k in range(len(sources)):
            s = sources[k]
            if not mask[s]:
                continue
            dist[s] = 0
            queue[0] = s
            head = 0
            tail = 1
            best = 0
            while head < tail:
                i = queue[head]
                head += 1
                if targets[i] and dist[i] > best:
                    best = dist[i]
                d = dist[i] + 1
                for off in offsets:
                    j = i + off
                    if mask[j] and dist[j] < 0:
                        dist[j] = d
                        queue[tail] = j
                        tail += 1
            out[k] = best
            for q in range(tail):
                dist[queue[q]] = -1
        return out

    @numba.njit(cache=True, nogil=True)
    def _grow_nb(uniforms, offsets, n_sites, origin, cap, q, q_tilt):
        trials, width = uniforms.shape
        sizes = np.zeros(trials, dtype=np.int64)
        logw = np.zeros(trials)
        status = np.zeros(n_sites, dtype=np.int8)  # 0 unseen, 1 open, 2 closed
        touched = np.empty(width, dtype=np.int64)
        queue = np.empty(width, dtype=np.int64)
        lc = math.log(q / q_tilt)
        lo = math.log((1.0 - q) / (1.0 - q_tilt))
        for t in range(trials):
            u = uniforms[t]
            ptr = 0
            n_touched = 0
            w = 0.0
            size = 0
            status[origin] = 2 if u[ptr] < q_tilt else 1
            ptr += 1
            touched[n_touched] = origin
            n_touched += 1
            if status[origin] == 2:
                w += lc
                size = 1
                queue[0] = origin
                head = 0
                tail = 1
                while head < tail and size < cap:
                    i = queue[head]
                    head += 1
                    for off in offsets:
                        j = i + off
                        if status[j] != 0:
                            continue
                        touched[n_touched] = j
                        n_touched += 1
                        if u[ptr] < q_tilt:
                            status[j] = 2
                            w += lc
                            queue[tail] = j
                            tail += 1
                            size += 1
                        else:
                            status[j] = 1
                            w += lo
                        ptr += 1
                        if size >= cap:
                            break
            else:
                w += lo
            sizes[t] = size
            logw[t] = w
            for k in range(n_touched):
                status[touched[k]] = 0
        return sizes, logw

    @numba.njit(cache=True, nogil=True)
    def _origin_cluster_sizes_nb(closed, offsets, origin, cap):
        # closed: (trials, n) flattened padded windows
        trials, n = closed.shape
        out = np.zeros(trials, dtype=np.int64)
        seen = np.zeros(n, dtype=np.int64)
        queue = np.empty(n, dtype=np.int64)
        for t in range(trials):
            if not closed[t, origin]:
                continue
            stamp = t + 1
            seen[origin] = stamp
            queue[0] = origin
            head = 0
            tail = 1
            while head < tail and tail < cap:
                i = queue[head]
                head += 1
                for off in offsets:
                    j = i + off
                    if closed[t, j] and seen[j] != stamp:
                        seen[j] = stamp
                        queue[tail] = j
                        tail += 1
            out[t] = min(tail, cap)
        return out


# ---------------------------------------------------------------------------
# numpy implementations


def _shift_min(lab: np.ndarray, vec: np.ndarray, big: int) -> np.ndarray:
    """lab shifted so out[x] = lab[x + vec], filled with ``big`` off-grid."""
    out = np.full_like(lab, big)
    src = []
    dst = []
    for v, n in zip(vec, lab.shape):
        if v >= 0:
            src.append(slice(v, n))
            dst.append(slice(0, n - v))
        else:
            src.append(slice(0, n + v))
            dst.append(slice(-v, n))
    out[tuple(dst)] = lab[tuple(src)]
    return out


def _label_np(mask: np.ndarray, adjacency: str) -> tuple[np.ndarray, int]:
    """Union-find over the edge list: hook each root to the smaller root of a
    neighbor, then compress to stars, until no edge joins two roots."""
    flat = mask.ravel()
    idx = np.arange(mask.size, dtype=np.int64).reshape(mask.shape)
    a_parts, b_parts = [], []
    for v in neighbor_vectors(mask.ndim, adjacency):
        if tuple(v) <= (0,) * mask.ndim:
            continue  # each undirected edge once
        nb = _shift_min(idx, v, -1)
        ok = mask & (nb >= 0)
        ok[ok] = flat[nb[ok]]
        a_parts.append(idx[ok])
        b_parts.append(nb[ok])
    a = np.concatenate(a_parts) if a_parts else np.zeros(0, np.int64)
    b = np.concatenate(b_parts) if b_parts else np.zeros(0, np.int64)
    parent = np.arange(mask.size, dtype=np.int64)
    while True:
        ra, rb = parent[a], parent[b]
        diff = ra != rb
        if not diff.any():
            break
        lo = np.minimum(ra[diff], rb[diff])
        hi = np.maximum(ra[diff], rb[diff])
        np.minimum.at(parent, hi, lo)
        while True:
            nxt = parent[parent]
            if np.array_equal(nxt, parent):
                break
            parent = nxt
    out = np.zeros(mask.shape, dtype=np.int64)
    if mask.any():
        roots, inv = np.unique(parent[flat], return_inverse=True)
        out[mask] = inv + 1
        return out, len(roots)
    return out, 0


def _bfs_np(mask: np.ndarray, sources: np.ndarray) -> np.ndarray:
    dist = np.full(mask.shape, -1, dtype=np.int64)
    frontier = np.zeros(mask.shape, dtype=bool)
    frontier.ravel()[sources] = True
    frontier &= mask
    dist[frontier] = 0
    vecs = neighbor_vectors(mask.ndim, FACE)
    d = 0
    while frontier.any():
        d += 1
        grown = np.zeros_like(frontier)
        for v in vecs:
            grown |= _shift_min(frontier.astype(np.int8), v, 0).astype(bool)
        frontier = grown & mask & (dist < 0)
        dist[frontier] = d
    return dist


# ---------------------------------------------------------------------------
# public dispatch


def label(mask: np.ndarray, adjacency: str = FACE, backend: str | None = None) -> tuple[np.ndarray, int]:
    """Connected-component labels of a boolean array.

    Returns ``(labels, count)``; background is 0 and components are numbered
    1..count in raster order of their first cell.
    """
    mask = np.asarray(mask, dtype=bool)
    if resolve_backend(backend) == "numpy":
        return _label_np(mask, adjacency)
    padded = _pad(mask)
    vecs = neighbor_vectors(mask.ndim, adjacency)
    offs = _flat_offsets(padded.shape, vecs)
    back = np.ascontiguousarray(offs[offs < 0])
    labels, count = _uf_label_nb(padded.ravel(), back)
    return np.ascontiguousarray(_crop(labels.reshape(padded.shape))), int(count)


def bfs_distances(mask: np.ndarray, sources, backend: str | None = None) -> np.ndarray:
    """Face-adjacency hop counts from ``sources`` through ``mask`` (-1 = unreached).

    ``sources`` is a sequence of index tuples, or a single index tuple.
    """
    mask = np.asarray(mask, dtype=bool)
    src = np.asarray(sources, dtype=np.int64)
    if src.ndim == 1:
        src = src[None, :]
    if resolve_backend(backend) == "numpy":
        flat = np.ravel_multi_index(tuple(src.T), mask.shape)
        return _bfs_np(mask, flat)
    padded = _pad(mask)
    flat = np.ravel_multi_index(tuple((src + 1).T), padded.shape)
    offs = _flat_offsets(padded.shape, neighbor_vectors(mask.ndim, FACE))
    dist = _bfs_nb(padded.ravel(), offs, flat)
    return np.ascontiguousarray(_crop(dist.reshape(padded.shape)))


def eccentricities(mask: np.ndarray, sources, targets: np.ndarray | None = None,
                   backend: str | None = None) -> np.ndarray:
    """Per source, the largest face-adjacency hop count to a reachable target cell.

    ``targets`` defaults to ``mask``. Unoccupied sources get -1.
    """
    mask = np.asarray(mask, dtype=bool)
    targets = mask if targets is None else np.asarray(targets, dtype=bool) & mask
    src = np.asarray(sources, dtype=np.int64).reshape(-1, mask.ndim)
    if resolve_backend(backend) == "numpy":
        out = np.full(len(src), -1, dtype=np.int64)
        for k, s in enumerate(src):
            if not mask[tuple(s)]:
                continue
            dist = _bfs_np(mask, np.ravel_multi_index(tuple(s), mask.shape))
            reach = dist[targets & (dist >= 0)]
            out[k] = int(reach.max()) if reach.size else 0
        return out
    padded = _pad(mask)
    ptarg = _pad(targets).ravel()
    flat = np.ravel_multi_index(tuple((src + 1).T), padded.shape)
    offs = _flat_offsets(padded.shape, neighbor_vectors(mask.ndim, FACE))
    return _ecc_nb(padded.ravel(), offs, np.atleast_1d(flat), ptarg)


def origin_cluster_sizes(closed: np.ndarray, cap: int, backend: str | None = None) -> np.ndarray:
    """Size of the star-connected closed cluster at the window center, per trial.

    ``closed`` has shape (trials, *window) with odd window sides. Growth stops
    once ``cap`` sites are found, so sizes are exact below ``cap`` and
    reported as ``cap`` otherwise.
    """
    closed = np.asarray(closed, dtype=bool)
    trials = closed.shape[0]
    window = closed.shape[1:]
    center = tuple(n // 2 for n in window)
    if resolve_backend(backend) == "numpy":
        out = np.zeros(trials, dtype=np.int64)
        for t in range(trials):
            if not closed[t][center]:
                continue
            lab, _ = _label_np(closed[t], STAR)
            out[t] = min(int(np.count_nonzero(lab == lab[center])), cap)
        return out
    padded = np.pad(closed, [(0, 0)] + [(1, 1)] * len(window), constant_values=False)
    pshape = padded.shape[1:]
    offs = _flat_offsets(pshape, neighbor_vectors(len(window), STAR))
    origin = int(np.ravel_multi_index(tuple(c + 1 for c in center), pshape))
    flat = np.ascontiguousarray(padded.reshape(trials, -1))
    return _origin_cluster_sizes_nb(flat, offs, origin, cap)


def growth_width(dim: int, cap: int) -> int:
    """Uniforms consumed at most by one capped cluster growth."""
    return 1 + (3**dim - 1) * cap


def grow_closed_clusters(uniforms: np.ndarray, dim: int, cap: int, q: float, q_tilt: float | None = None,
                         backend: str | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Star-connected closed cluster at the origin, grown site by site.

    Each newly examined site is closed when its uniform is below ``q_tilt``
    (default ``q``). Growth stops once ``cap`` closed sites are found.
    Returns ``(sizes, log_weights)``; the weights are likelihood ratios of the
    examined sites under closing probability ``q`` versus ``q_tilt``, so
    ``mean(exp(logw) * [size > n])`` is unbiased for ``P_q(|C_0| > n)``.
    """
    q_tilt = q if q_tilt is None else q_tilt
    if not (0 < q < 1 and 0 < q_tilt < 1):
        raise ValueError("closing probabilities must lie in (0, 1)")
    u = np.ascontiguousarray(uniforms, dtype=np.float64)
    if u.ndim != 2 or u.shape[1] < growth_width(dim, cap):
        raise ValueError(f"need uniforms of shape (trials, >= {growth_width(dim, cap)})")
    side = 2 * cap + 3
    shape = (side,) * dim
    offs = _flat_offsets(shape, neighbor_vectors(dim, STAR))
    origin = int(np.ravel_multi_index((cap + 1,) * dim, shape))
    if resolve_backend(backend) == "numba":
        return _grow_nb(u, offs, side**dim, origin, cap, q, q_tilt)
    return _grow_py(u, offs, side**dim, origin, cap, q, q_tilt)


def _grow_py(uniforms, offsets, n_sites, origin, cap, q, q_tilt):
    lc = math.log(q / q_tilt)
    lo = math.log((1.0 - q) / (1.0 - q_tilt))
    sizes = np.zeros(len(uniforms), dtype=np.int64)
    logw = np.zeros(len(uniforms))
    for t, u in enumerate(uniforms):
        draws = iter(u)
        status = {origin: next(draws) < q_tilt}
        if not status[origin]:
            logw[t] = lo
            continue
        w, size, queue = lc, 1, [origin]
        head = 0
        while head < len(queue) and size < cap:
            i = queue[head]
            head += 1
            for off in offsets:
                j = int(i + off)
                if j in status:
                    continue
                closed = next(draws) < q_tilt
                status[j] = closed
                if closed:
                    w += lc
                    queue.append(j)
                    size += 1
                else:
                    w += lo
                if size >= cap:
                    break
        sizes[t] = size
        logw[t] = w
    return sizes, logw
