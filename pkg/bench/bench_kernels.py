"""Compare the numba and numpy backends on the hot kernels.

    python3 bench/bench_kernels.py [--side 400] [--repeat 5]

Each kernel is timed on identical inputs under both backends, after one
warm-up call so numba compile time is excluded, and outputs are checked to agree.
"""
from __future__ import annotations

import argparse
import time

import numpy as np

from gaussperc import _kernels as K


def best_of(fn, repeat):
    fn()  # warm-up / JIT compile
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def cases(side, rng):
    mask = rng.random((side, side)) < 0.6
    src = tuple(int(i) for i in np.argwhere(mask)[0])
    closed = rng.random((200, 41, 41)) < 0.4
    cap = 20
    u = rng.random((2000, K.growth_width(2, cap)))
    comp = rng.random((60, 60)) < 0.75
    lab, _ = K.label(comp, K.FACE)
    big = np.argmax(np.bincount(lab.ravel())[1:]) + 1
    comp = lab == big
    cells = np.argwhere(comp)[:200]
    return {
        f"label face {side}x{side}": lambda b: K.label(mask, K.FACE, b),
        f"label star {side}x{side}": lambda b: K.label(mask, K.STAR, b),
        f"bfs {side}x{side}": lambda b: K.bfs_distances(mask, src, b),
        "eccentricities 200 sources": lambda b: K.eccentricities(comp, cells, backend=b),
        "origin clusters 200x41x41": lambda b: K.origin_cluster_sizes(closed, 500, b),
        "tilted growth 2000 x cap 20": lambda b: K.grow_closed_clusters(u, 2, cap, 0.05, 0.3, b),
    }


def same(a, b):
    if isinstance(a, tuple):
        return all(same(x, y) for x, y in zip(a, b))
    return np.allclose(a, b)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--side", type=int, default=400)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)
    rng = np.random.default_rng(args.seed)
    print(f"{'kernel':32s} {'numba [ms]':>11s} {'numpy [ms]':>11s} {'speedup':>8s}  agree")
    for name, fn in cases(args.side, rng).items():
        t_nb, out_nb = best_of(lambda: fn("numba"), args.repeat)
        t_np, out_np = best_of(lambda: fn("numpy"), max(1, args.repeat // 2))
        print(f"{name:32s} {1e3 * t_nb:11.2f} {1e3 * t_np:11.2f} {t_np / t_nb:8.1f}  {same(out_nb, out_np)}")


if __name__ == "__main__":
    main()
