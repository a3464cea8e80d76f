"""Experiment drivers: each streams per-trial rows to CSV and ends with a summary."""
from __future__ import annotations

import math
from concurrent.futures import ThreadPoolExecutor

import numpy as np

from .. import chem, renorm
from ..excursion import (BoxSpec, crossing_radii, duality_check, excursion_set,
                         exist_event, small_clusters_property, unique_event)
from ..field import Grid, discretize, make_kernel, sample_field, save_gridfield
from ..rng import trial_rng
from ..stats import fit_log_linear, fit_power_tail
from .analysis import estimate_critical_level
from .config import ExperimentConfig
from .plot import emit_plot
from .store import ResultStore, write_csv


EVENT_COLUMNS = ["trial", "level", "R", "kappa", "exist", "unique", "local_uniqueness", "small_clusters",
                 "duality_antecedent", "duality_violated", "components", "max_diameter"]
CROSSING_COLUMNS = ["trial", "level", "R", "crossed"]
LEVEL_COLUMNS = ["trial", "level", "exist"]
LEVEL_SUMMARY_COLUMNS = ["level", "trials", "successes", "freq"]
CHEMDIST_COLUMNS = ["trial", "level", "x_norm", "status", "d_chem", "stretch"]
STAIL_COLUMNS = ["trial", "level", "s", "S", "exact"]
STRUCTURE_COLUMNS = ["p", "x_norm", "trials", "successes", "wilson_low", "wilson_high"]
DOMINATION_COLUMNS = ["trial", "level", "source", "open_fraction", "event"]
STRETCH_COLUMNS = ["seed", "level", "x_norm", "connected", "d_chem", "stretch", "kappa_target"]


def ordered_map(fn, items, threads: int = 1):
    """Map preserving input order; threads only change wall time."""
    if threads <= 1:
        yield from map(fn, items)
        return
    with ThreadPoolExecutor(max_workers=threads) as pool:
        yield from pool.map(fn, items)


def kernel_of(cfg: ExperimentConfig):
    f = cfg.field
    return make_kernel(f.kernel, f.dim, f.beta, f.truncation)


def grid_of(cfg: ExperimentConfig, default_half: float | None = None) -> Grid:
    f = cfg.field
    if f.extent is not None:
        return Grid(f.dim, f.extent, f.spacing)
    half = f.half_width if f.half_width is not None else default_half
    if half is None:
        raise ValueError("no domain size given")
    return Grid.centered(f.dim, half, f.spacing)


def draw(cfg: ExperimentConfig, grid: Grid, kernel, trial: int, stream_base: int = 0):
    field = sample_field(grid, kernel, trial_rng(cfg.seed, stream_base + trial))
    if cfg.field.eps is not None:
        field = discretize(field, cfg.field.eps)
    return field


# ---------------------------------------------------------------------------


def run_sample(cfg, store: ResultStore, threads: int = 1) -> dict:
    grid = grid_of(cfg)
    field = draw(cfg, grid, kernel_of(cfg), 0)
    save_gridfield(field, store.path / "field.gpf")
    store.adopt("field.gpf")
    store.adopt("field.gpf.json")
    v = field.values
    return {"cells": grid.n_cells, "mean": float(v.mean()), "std": float(v.std()),
            "min": float(v.min()), "max": float(v.max())}


def run_events(cfg, store, threads=1) -> dict:
    e = cfg.event
    grid = grid_of(cfg, e.R * (1 + e.kappa) + cfg.field.spacing)
    kernel = kernel_of(cfg)
    box = BoxSpec(tuple(grid.origin), e.R, e.kappa)

    def trial(t):
        f = draw(cfg, grid, kernel, t)
        rows = []
        for level in e.levels:
            es = excursion_set(f, level)
            inner = es.restrict(box.center, box.R)
            ex, un = exist_event(es, box), unique_event(es, box)
            dual = duality_check(f, box, level)
            rows.append({"trial": t, "level": level, "R": e.R, "kappa": e.kappa, "exist": ex, "unique": un,
                         "local_uniqueness": ex and un, "small_clusters": small_clusters_property(es, box),
                         "duality_antecedent": dual.antecedent, "duality_violated": dual.violated,
                         "components": inner.n_components, "max_diameter": inner.max_diameter()})
        return rows

    counts = {l: np.zeros(5, dtype=np.int64) for l in e.levels}
    with store.csv("events.csv", EVENT_COLUMNS) as out:
        for rows in ordered_map(trial, range(cfg.trials), threads):
            for r in rows:
                out.write(r)
                counts[r["level"]] += [r["exist"], r["unique"], r["local_uniqueness"], r["small_clusters"],
                                       r["duality_violated"]]
    names = ["exist", "unique", "local_uniqueness", "small_clusters", "duality_violations"]
    return {"per_level": [{"level": l, **{n: int(c) for n, c in zip(names, counts[l])}, "trials": cfg.trials}
                          for l in e.levels]}


def run_crossing_scan(cfg, store, threads=1) -> dict:
    e = cfg.event
    radii = np.array(sorted(e.radii))
    grid = grid_of(cfg, float(radii.max()))
    kernel = kernel_of(cfg)

    def trial(t):
        f = draw(cfg, grid, kernel, t)
        return [(level, crossing_radii(excursion_set(f, level, side=e.side), radii)) for level in e.levels]

    hits = {l: np.zeros(len(radii), dtype=np.int64) for l in e.levels}
    with store.csv("crossing.csv", CROSSING_COLUMNS) as out:
        for t, res in enumerate(ordered_map(trial, range(cfg.trials), threads)):
            for level, crossed in res:
                hits[level] += crossed
                for R, c in zip(radii, crossed):
                    out.write({"trial": t, "level": level, "R": float(R), "crossed": bool(c)})
    rows, fits = [], []
    for level in e.levels:
        freq = hits[level] / cfg.trials
        for R, k, fq in zip(radii, hits[level], freq):
            rows.append({"level": level, "R": float(R), "trials": cfg.trials, "crossings": int(k), "freq": fq})
        rate, r2 = fit_log_linear(radii, freq)
        fits.append({"level": level, "side": e.side, "rate": rate, "r2": r2,
                     "strictly_decreasing": bool(np.all(np.diff(freq) < 0))})
    write_csv(store.register("crossing_summary.csv"), ["level", "R", "trials", "crossings", "freq"], rows)
    return {"fits": fits}


def run_level_scan(cfg, store, threads=1) -> dict:
    e = cfg.event
    grid = grid_of(cfg, e.R)
    kernel = kernel_of(cfg)
    box = BoxSpec(tuple(grid.origin), e.R, e.kappa)

    def trial(t):
        f = draw(cfg, grid, kernel, t)
        return [exist_event(excursion_set(f, level), box) for level in e.levels]

    hits = np.zeros(len(e.levels), dtype=np.int64)
    with store.csv("level_scan.csv", LEVEL_COLUMNS) as out:
        for t, flags in enumerate(ordered_map(trial, range(cfg.trials), threads)):
            hits += flags
            for level, ok in zip(e.levels, flags):
                out.write({"trial": t, "level": level, "exist": ok})
    table = [{"level": l, "trials": cfg.trials, "successes": int(k), "freq": k / cfg.trials}
             for l, k in zip(e.levels, hits)]
    table.sort(key=lambda r: r["level"])
    write_csv(store.register("levels.csv"), LEVEL_SUMMARY_COLUMNS, table)
    summary = {"levels": table}
    try:
        est = estimate_critical_level(table, seed=cfg.seed)
        summary["critical_level"] = {"estimate": est.estimate, "width": est.width,
                                     "ci_low": est.ci_low, "ci_high": est.ci_high}
    except ValueError as exc:
        summary["critical_level"] = {"error": str(exc)}
    return summary


def run_chemdist(cfg, store, threads=1) -> dict:
    e = cfg.event
    dists = sorted(e.distances)
    f0 = cfg.field
    grid = grid_of(cfg) if (f0.extent or f0.half_width) else chem.pair_domain(dists[-1], f0.spacing, f0.dim)
    kernel = kernel_of(cfg)
    zero = (0.0,) * f0.dim
    a = grid.index_of(zero)
    targets = [grid.index_of((x,) + zero[1:]) for x in dists]

    def trial(t):
        f = draw(cfg, grid, kernel, t)
        out = []
        for level in e.levels:
            es = excursion_set(f, level)
            for x, b in zip(dists, targets):
                res = chem.chemical_distance(es, a, b, with_path=False)
                out.append({"trial": t, "level": level, "x_norm": x, "status": res.status,
                            "d_chem": res.length, "stretch": res.length / x})
        return out

    stats: dict[tuple, list] = {}
    with store.csv("chemdist.csv", CHEMDIST_COLUMNS) as out:
        for rows in ordered_map(trial, range(cfg.trials), threads):
            for r in rows:
                out.write(r)
                stats.setdefault((r["level"], r["x_norm"]), []).append(r["stretch"])
    summary = []
    for (level, x), s in sorted(stats.items()):
        s = np.array(s)
        conn = s[np.isfinite(s)]
        summary.append({"level": level, "x_norm": x, "trials": len(s), "connected": int(conn.size),
                        "median_stretch": float(np.median(conn)) if conn.size else math.inf})
    return {"per_distance": summary}


def run_s_tail(cfg, store, threads=1) -> dict:
    e = cfg.event
    grid = grid_of(cfg, 2 * e.s)
    kernel = kernel_of(cfg)
    thr = np.array(sorted(e.thresholds))

    def trial(t):
        f = draw(cfg, grid, kernel, t)
        return [(level, *chem.chemical_S(excursion_set(f, level), e.s)) for level in e.levels]

    values = {l: [] for l in e.levels}
    with store.csv("s_tail.csv", STAIL_COLUMNS) as out:
        for t, res in enumerate(ordered_map(trial, range(cfg.trials), threads)):
            for level, S, exact in res:
                values[level].append(S)
                out.write({"trial": t, "level": level, "s": e.s, "S": S, "exact": exact})
    tails = []
    for level in e.levels:
        v = np.array(values[level])
        freq = [(v >= t).mean() for t in thr]
        exponent, r2 = fit_power_tail(thr, freq)
        tails.append({"level": level, "thresholds": thr.tolist(), "freq": freq, "power_exponent": exponent,
                      "r2": r2})
    return {"tails": tails}


def run_renorm_scan(cfg, store, threads=1) -> dict:
    e = cfg.event
    rows = renorm.structure_probability_scan(e.p_values, e.x_norms, cfg.trials, trial_rng(cfg.seed, 0),
                                             e.C0, e.delta, cfg.field.dim)
    with store.csv("structures.csv", STRUCTURE_COLUMNS) as out:
        for r in rows:
            out.write(r)
    return {"C0": e.C0, "delta": e.delta, "rows": rows}


def run_domination(cfg, store, threads=1) -> dict:
    e, f = cfg.event, cfg.field
    r = f.truncation if f.truncation is not None else e.R
    M = renorm.dependence_range_sites(r, e.R, e.kappa)
    reports = []
    with store.csv("domination.csv", DOMINATION_COLUMNS) as out:
        for li, level in enumerate(e.levels):
            base = li * cfg.trials

            def mu(t, level=level, base=base):
                return renorm.coarse_grain(e.R, level, e.sites, trial_rng(cfg.seed, base + t), e.kappa, r, f.eps,
                                           f.spacing, f.kernel, f.beta).omega

            samples = list(ordered_map(mu, range(cfg.trials), threads))
            it = iter(samples)
            rep = renorm.domination_probe(lambda _rng: next(it), renorm.left_right_crossing, M, cfg.trials,
                                          trial_rng(cfg.seed, 2**40 + li))
            for t, om in enumerate(samples):
                out.write({"trial": t, "level": level, "source": "mu", "open_fraction": float(om.mean()),
                           "event": renorm.left_right_crossing(om)})
            reports.append({"level": level, "M": M, "p_hat": rep.p_hat, "alpha": rep.alpha, "q": rep.q,
                            "p_mu": rep.p_mu, "p_pi": rep.p_pi, "pooled_se": rep.pooled_se,
                            "wilson_mu": list(rep.wilson_mu), "wilson_pi": list(rep.wilson_pi),
                            "passed": rep.passed})
    return {"reports": reports}


def run_stretch(cfg, store, threads=1) -> dict:
    e, f = cfg.event, cfg.field
    beta = math.inf if f.beta is None else f.beta
    sc = chem.StretchConfig(tuple(e.levels), tuple(e.distances), cfg.trials, f.spacing, f.kernel, beta, e.delta,
                            cfg.seed, dim=f.dim)
    kappa = chem.kappa_exponent(f.dim, beta, e.delta)
    records = []
    schedule = []
    with store.csv("stretch.csv", STRETCH_COLUMNS) as out:
        for level in sc.levels:
            for xi, x in enumerate(sc.distances):
                setup = chem.stretch_setup(sc, x)
                scale, clamped = chem.schedule_scale(x, beta, e.delta, f.dim, f.spacing)
                schedule.append({"x_norm": x, "scale": scale, "clamped": clamped})
                recs = ordered_map(lambda t: chem.stretch_trial(sc, setup, level, xi, t), range(cfg.trials),
                                   threads)
                for rec in recs:
                    records.append(rec)
                    out.write({"seed": rec.seed, "level": rec.level, "x_norm": rec.x_norm,
                               "connected": rec.connected, "d_chem": rec.d_chem, "stretch": rec.stretch,
                               "kappa_target": rec.kappa_target})
    summary = chem.stretch_summary(records, kappa)
    summary["schedule"] = schedule
    cols = list(summary["rows"][0]) if summary["rows"] else ["level", "x_norm"]
    write_csv(store.register("stretch_summary.csv"), cols, summary["rows"])
    spec = {"x": "x_norm", "y": "stretch_q50", "logx": True, "kind": "line", "title": "median stretch",
            "reference": {"kappa": kappa, "label": f"log(x)^{kappa:g}"}}
    store.write_bytes("stretch.svg", emit_plot(summary["rows"], spec))
    return summary


RUNNERS = {
    "sample": run_sample,
    "events": run_events,
    "crossing-scan": run_crossing_scan,
    "level-scan": run_level_scan,
    "chemdist": run_chemdist,
    "s-tail": run_s_tail,
    "renorm-scan": run_renorm_scan,
    "domination": run_domination,
    "stretch": run_stretch,
}


def run(cfg: ExperimentConfig, out=None, threads: int = 1) -> ResultStore:
    """Execute ``cfg`` into ``<out>/<run_id>/``; the manifest appears only on success."""
    with ResultStore(cfg, out) as store:
        summary = RUNNERS[cfg.experiment](cfg, store, threads)
        store.write_json("summary.json", {"experiment": cfg.experiment, "run_id": store.run_id, **summary})
    return store
