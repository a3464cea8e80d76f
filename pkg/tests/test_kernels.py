from __future__ import annotations

import math

import numpy as np
import pytest
from scipy import ndimage

from gaussperc import _kernels as K

BACKENDS = ("numba", "numpy")


def scipy_labels(mask, adjacency):
    conn = 1 if adjacency == K.FACE else mask.ndim
    struct = ndimage.generate_binary_structure(mask.ndim, conn)
    return ndimage.label(mask, structure=struct)


def same_partition(a, b):
    """Two label arrays induce the same partition of occupied cells."""
    if not np.array_equal(a > 0, b > 0):
        return False
    occ = a > 0
    pairs = set(zip(a[occ].tolist(), b[occ].tolist()))
    return len(pairs) == len({p[0] for p in pairs}) == len({p[1] for p in pairs})


def test_neighbor_counts():
    assert len(K.neighbor_vectors(2, K.FACE)) == 4
    assert len(K.neighbor_vectors(2, K.STAR)) == 8
    assert len(K.neighbor_vectors(3, K.FACE)) == 6
    assert len(K.neighbor_vectors(3, K.STAR)) == 26


def test_unknown_backend_rejected():
    with pytest.raises(ValueError):
        K.resolve_backend("cuda")


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("adjacency", [K.FACE, K.STAR])
@pytest.mark.parametrize("shape", [(12, 12), (7, 19), (6, 6, 6)])
def test_label_matches_flood_fill(backend, adjacency, shape):
    rng = np.random.default_rng(hash((backend, adjacency, shape)) % 2**32)
    for p in (0.3, 0.55, 0.8):
        mask = rng.random(shape) < p
        lab, n = K.label(mask, adjacency, backend)
        ref, n_ref = scipy_labels(mask, adjacency)
        assert n == n_ref
        assert same_partition(lab, ref)


def test_label_raster_order():
    mask = np.array([[0, 1, 0, 1], [0, 1, 0, 0], [1, 0, 0, 1]], dtype=bool)
    for b in BACKENDS:
        lab, n = K.label(mask, K.FACE, b)
        assert n == 4
        assert lab[0, 1] == 1 and lab[0, 3] == 2 and lab[2, 0] == 3 and lab[2, 3] == 4


def test_label_backends_identical():
    rng = np.random.default_rng(3)
    mask = rng.random((40, 33)) < 0.6
    for adj in (K.FACE, K.STAR):
        a, na = K.label(mask, adj, "numba")
        b, nb = K.label(mask, adj, "numpy")
        assert na == nb
        assert np.array_equal(a, b)


def test_bfs_matches_between_backends():
    rng = np.random.default_rng(4)
    mask = rng.random((30, 30)) < 0.65
    src = tuple(int(i) for i in np.argwhere(mask)[0])
    a = K.bfs_distances(mask, src, "numba")
    b = K.bfs_distances(mask, src, "numpy")
    assert np.array_equal(a, b)
    assert a[src] == 0
    lab, _ = K.label(mask, K.FACE)
    assert np.array_equal(a >= 0, lab == lab[src])


def test_bfs_corridor():
    mask = np.zeros((3, 10), dtype=bool)
    mask[1] = True
    d = K.bfs_distances(mask, (1, 0))
    assert d[1].tolist() == list(range(10))
    assert np.all(d[0] == -1)


def test_eccentricities_backends_and_bruteforce():
    rng = np.random.default_rng(5)
    mask = rng.random((15, 15)) < 0.7
    cells = np.argwhere(mask)[:20]
    a = K.eccentricities(mask, cells, backend="numba")
    b = K.eccentricities(mask, cells, backend="numpy")
    assert np.array_equal(a, b)
    for k, s in enumerate(cells):
        d = K.bfs_distances(mask, tuple(s))
        assert a[k] == d.max()
    assert K.eccentricities(~mask, cells[:1])[0] == -1


def test_origin_cluster_sizes_against_labeling():
    rng = np.random.default_rng(6)
    closed = rng.random((50, 15, 15)) < 0.45
    for b in BACKENDS:
        sizes = K.origin_cluster_sizes(closed, cap=1000, backend=b)
        for t in range(50):
            lab, _ = scipy_labels(closed[t], K.STAR)
            c = lab[7, 7]
            expect = 0 if c == 0 else int(np.count_nonzero(lab == c))
            assert sizes[t] == expect
    capped = K.origin_cluster_sizes(closed, cap=5)
    assert capped.max() <= 5


def test_grow_backends_identical():
    rng = np.random.default_rng(7)
    cap = 12
    u = rng.random((300, K.growth_width(2, cap)))
    a = K.grow_closed_clusters(u, 2, cap, 0.2, 0.35, "numba")
    b = K.grow_closed_clusters(u, 2, cap, 0.2, 0.35, "numpy")
    assert np.array_equal(a[0], b[0])
    assert np.allclose(a[1], b[1])


def test_grow_untilted_matches_window_labeling():
    # the cluster law from sequential growth equals the static star-cluster law
    rng = np.random.default_rng(8)
    q, cap, n = 0.3, 30, 20000
    u = rng.random((n, K.growth_width(2, cap)))
    sizes, logw = K.grow_closed_clusters(u, 2, cap, q)
    assert np.all(logw == 0.0)
    closed = rng.random((n, 2 * cap + 3, 2 * cap + 3)) < q
    ref = K.origin_cluster_sizes(closed, cap)
    for k in (0, 1, 2, 4):
        p1 = np.mean(sizes > k)
        p2 = np.mean(ref > k)
        se = math.sqrt(max(p1 * (1 - p1), 1e-4) / n)
        assert abs(p1 - p2) < 5 * math.sqrt(2) * se


def test_grow_tilted_is_unbiased():
    rng = np.random.default_rng(9)
    q, cap, n = 0.1, 10, 40000
    u = rng.random((n, K.growth_width(2, cap)))
    s0, _ = K.grow_closed_clusters(u, 2, cap, q)
    u = rng.random((n, K.growth_width(2, cap)))
    s1, lw = K.grow_closed_clusters(u, 2, cap, q, q_tilt=0.25)
    w = np.exp(lw)
    for k in (0, 1, 2):
        plain = np.mean(s0 > k)
        tilted = np.mean(w * (s1 > k))
        se = math.sqrt(plain * (1 - plain) / n + np.var(w * (s1 > k)) / n)
        assert abs(plain - tilted) < 5 * se


def test_grow_rejects_narrow_uniforms():
    with pytest.raises(ValueError):
        K.grow_closed_clusters(np.zeros((2, 5)), 2, 10, 0.1)
