from __future__ import annotations

import itertools
import math

import numpy as np
import pytest

from gaussperc._kernels import FACE, STAR
from gaussperc.excursion import (
    LOWER,
    UPPER,
    BoxSpec,
    ExcursionSet,
    certified_box_size,
    crossing_probe,
    crossing_radii,
    duality_check,
    euclidean_diameter,
    excursion_set,
    exist_event,
    local_uniqueness,
    regularity_probe,
    small_clusters_property,
    unique_event,
)
from gaussperc.field import BARGMANN_FOCK, Grid, GridField, make_kernel, sample_field

GRID = Grid(2, (21, 21), 1.0)  # coordinates -10..10 on both axes


def occupancy_set(occ, grid=GRID, adjacency=FACE):
    return ExcursionSet(grid, occ, 0.0, adjacency)


def coords(grid=GRID):
    return np.meshgrid(grid.axis_coords(0), grid.axis_coords(1), indexing="ij")


def brute_diameter(idx, h):
    idx = np.asarray(idx, dtype=float)
    best = 0.0
    for a, b in itertools.combinations(idx, 2):
        best = max(best, float(np.linalg.norm(a - b)))
    return h * best


# -- excursion sets ------------------------------------------------------------


def test_constant_fields():
    g = Grid(2, (6, 6), 0.25)
    zero = GridField(g, np.zeros((6, 6)))
    assert excursion_set(zero, 0.0).occupied.all()
    assert not excursion_set(zero, -1.0).occupied.any()


def test_checkerboard_components_are_single_cells():
    g = Grid(2, (4, 4), 1.0)
    v = np.where(np.add.outer(np.arange(4), np.arange(4)) % 2 == 0, 1.0, -1.0)
    es = excursion_set(GridField(g, v), 0.0, FACE)
    assert np.array_equal(es.occupied, v > 0)
    assert es.n_components == 8
    assert np.all(es.sizes[1:] == 1)
    star = excursion_set(GridField(g, v), 0.0, STAR)
    assert star.n_components == 1


def test_lower_side():
    g = Grid(2, (3, 3), 1.0)
    v = np.array([[-1, 0, 1], [2, -3, 0.5], [0, 0, 0]], dtype=float)
    es = excursion_set(GridField(g, v), 0.5, side=LOWER)
    assert np.array_equal(es.occupied, v <= -0.5)


def test_rejects_nonfinite_level():
    g = Grid(2, (3, 3), 1.0)
    with pytest.raises(ValueError):
        excursion_set(GridField(g, np.zeros((3, 3))), math.inf)


def test_level_monotonicity():
    g = Grid.centered(2, 6.0, 0.25)
    f = sample_field(g, make_kernel(BARGMANN_FOCK, 2), np.random.default_rng(2))
    box = BoxSpec((0, 0), 5.0)
    levels = np.linspace(-1, 1, 11)
    occ = [excursion_set(f, l).occupied for l in levels]
    ex = [exist_event(excursion_set(f, l), box) for l in levels]
    for a, b in zip(occ, occ[1:]):
        assert np.all(a <= b)
    for a, b in zip(ex, ex[1:]):
        assert b or not a


# -- diameters -------------------------------------------------------------------


@pytest.mark.parametrize("seed", range(8))
def test_diameter_against_bruteforce(seed):
    rng = np.random.default_rng(seed)
    idx = np.unique(rng.integers(0, 12, size=(40, 2)), axis=0)
    assert euclidean_diameter(idx, 0.5) == pytest.approx(brute_diameter(idx, 0.5), rel=1e-12)
    idx3 = np.unique(rng.integers(0, 6, size=(30, 3)), axis=0)
    assert euclidean_diameter(idx3, 1.0) == pytest.approx(brute_diameter(idx3, 1.0), rel=1e-12)


def test_component_table_bounds():
    rng = np.random.default_rng(4)
    g = Grid(2, (25, 25), 0.5)
    es = occupancy_set(rng.random((25, 25)) < 0.55, g)
    for row in es.component_table():
        lo, hi = es.diameter_bracket(row["label"])
        assert 0 <= lo <= row["diameter"] <= hi + 1e-12
        idx = es.component_indices(row["label"])
        assert len(idx) == row["cells"]
    assert es.max_diameter() == max(r["diameter"] for r in es.component_table())


# -- box events ------------------------------------------------------------------


def test_box_validation():
    with pytest.raises(ValueError):
        BoxSpec((0, 0), 1.0)
    with pytest.raises(ValueError):
        BoxSpec((0, 0), 5.0, kappa=1.0)


def test_full_and_empty_box():
    box = BoxSpec((0, 0), 5.0, 0.4)
    full = occupancy_set(np.ones(GRID.shape, bool))
    empty = occupancy_set(np.zeros(GRID.shape, bool))
    assert exist_event(full, box) and local_uniqueness(full, box)
    assert not exist_event(empty, box) and not local_uniqueness(empty, box)
    assert small_clusters_property(empty, box)


def test_box_must_fit():
    es = occupancy_set(np.ones(GRID.shape, bool))
    with pytest.raises(ValueError):
        exist_event(es, BoxSpec((0, 0), 11.0))
    with pytest.raises(ValueError):
        unique_event(es, BoxSpec((0, 0), 9.0, 0.5))


def test_single_slab_crosses_one_axis_only():
    x, y = coords()
    es = occupancy_set(np.abs(x) <= 1)
    assert not exist_event(es, BoxSpec((0, 0), 5.0))
    assert not small_clusters_property(es, BoxSpec((0, 0), 5.0, 0.4))


def test_single_cell_small_clusters():
    x, y = coords()
    es = occupancy_set((x == 0) & (y == 0))
    assert small_clusters_property(es, BoxSpec((0, 0), 5.0, 0.4))


def two_slabs(with_strip):
    x, y = coords()
    occ = ((x == -3) | (x == 3)) & (np.abs(y) <= 7)
    if with_strip:
        occ |= (y == 6) & (np.abs(x) <= 3)
    return occupancy_set(occ)


def test_two_slabs_joined_in_annulus():
    box = BoxSpec((0, 0), 5.0, 0.4)
    es = two_slabs(True)
    assert unique_event(es, box)
    assert not exist_event(es, box)
    assert not local_uniqueness(es, box)


def test_two_slabs_without_strip():
    es = two_slabs(False)
    assert not unique_event(es, BoxSpec((0, 0), 5.0, 0.4))


def test_unique_vacuous_with_one_large_component():
    x, y = coords()
    occ = (x == 0) & (np.abs(y) <= 7)
    occ |= (x == 4) & (y == 4)  # small second component
    assert unique_event(occupancy_set(occ), BoxSpec((0, 0), 5.0, 0.4))


def test_reflection_symmetry():
    g = Grid.centered(2, 7.0, 0.25)
    f = sample_field(g, make_kernel(BARGMANN_FOCK, 2), np.random.default_rng(8))
    box = BoxSpec((0, 0), 5.0, 0.25)
    for lvl in (-0.3, 0.0, 0.3):
        base = excursion_set(f, lvl)
        for ax in (0, 1):
            ref = excursion_set(GridField(g, np.flip(f.values, axis=ax)), lvl)
            d0 = sorted(r["diameter"] for r in base.component_table())
            d1 = sorted(r["diameter"] for r in ref.component_table())
            assert np.allclose(d0, d1)
            assert exist_event(base, box) == exist_event(ref, box)
            assert unique_event(base, box) == unique_event(ref, box)


# -- crossings -------------------------------------------------------------------


def test_crossing_radii_on_constructions():
    g = Grid(2, (41, 41), 0.5)
    x, y = coords(g)
    arm = (y == 0) & (x >= 0) & (x <= 6)
    es = occupancy_set(arm, g)
    assert crossing_radii(es, [3.0, 6.0, 7.0, 10.0]).tolist() == [True, True, False, False]
    off = occupancy_set((y == 3) & (x >= 0), g)  # does not meet B_1
    assert not crossing_radii(off, [3.0]).any()


def test_crossing_probe_extreme_levels():
    k = make_kernel(BARGMANN_FOCK, 2)
    g = Grid.centered(2, 3.0, 0.25)

    def sampler(rng):
        return sample_field(g, k, rng)

    assert crossing_probe(sampler, 10.0, 3.0, 20, side=UPPER) >= 0.99
    assert crossing_probe(sampler, 10.0, 3.0, 20, side=LOWER) <= 0.01
    with pytest.raises(ValueError):
        crossing_probe(sampler, 0.0, 1.5, 2)


# -- duality ---------------------------------------------------------------------


def test_duality_constant_fields():
    g = Grid.centered(2, 7.0, 0.5)
    box = BoxSpec((0, 0), 5.0, 0.25)
    pos = duality_check(GridField(g, np.ones(g.shape)), box, 0.0)
    assert pos.antecedent and pos.consequent and not pos.violated
    neg = duality_check(GridField(g, -np.ones(g.shape)), box, 0.0)
    assert not neg.antecedent and not neg.violated


def test_duality_on_samples():
    g = Grid.centered(2, 4.0, 0.25)
    k = make_kernel(BARGMANN_FOCK, 2)
    box = BoxSpec((0, 0), 3.0, 0.25)
    for t in range(30):
        f = sample_field(g, k, np.random.default_rng(100 + t))
        assert not duality_check(f, box, 1.5).violated


# -- regularity ------------------------------------------------------------------


def test_certified_box_size_formula():
    assert certified_box_size(1.0, 2.0, 2) == pytest.approx(1 / (16 * 2**1.5))
    assert certified_box_size(1.0, 2.0, 2) == pytest.approx(0.02210, abs=1e-5)
    assert certified_box_size(1.0, 1.0, 2) == 0.0
    assert certified_box_size(0.0, 1.0, 2) == 0.0


def test_regularity_linear():
    g = Grid.centered(2, 1.5, 0.1)
    x, y = coords(g)
    p = regularity_probe(GridField(g, x), BoxSpec((0, 0), 1.01), 0.0)
    assert p.lam == pytest.approx(1.0)
    assert p.k == pytest.approx(1.0, abs=1e-9)
    assert p.certified_eps == 0.0 and p.k_le_lambda


def test_regularity_sine():
    h = 0.05
    g = Grid.centered(2, 1.5, h)
    x, y = coords(g)
    p = regularity_probe(GridField(g, np.sin(x)), BoxSpec((0, 0), 1.01), 0.0)
    assert abs(p.lam - 1.0) <= 2 * h
    assert p.k > p.lam
    assert p.certified_eps == pytest.approx(p.lam**2 / (4 * p.k**2 * 2**1.5))


def test_regularity_needs_margin():
    g = Grid.centered(2, 1.0, 0.1)
    with pytest.raises(ValueError):
        regularity_probe(GridField(g, np.zeros(g.shape)), BoxSpec((0, 0), 1.0 + 1e-9), 0.0)


def test_regularity_flat_field_has_no_level_cells():
    g = Grid.centered(2, 1.5, 0.1)
    p = regularity_probe(GridField(g, np.ones(g.shape)), BoxSpec((0, 0), 1.01), 0.0)
    assert p.near_level_cells == 0 and p.certified_eps == 0.0
