import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from phc_purcell.geometry import (CavityDesign, GeometryError, HoleList, air_fill_factor, build_lattice,
                                  rasterize)

ANALYTIC_FILL = 2 * math.pi / math.sqrt(3) * 0.293**2


def _row(holes: HoleList, y: float) -> np.ndarray:
    return np.sort(holes.x[np.isclose(holes.y, y)])


def test_default_design_values():
    d = CavityDesign()
    assert (d.a_m, d.a_c, d.r_over_a) == (410.0, 440.0, 0.293)


@pytest.mark.parametrize("kw", [
    dict(a_m=0.0), dict(a_c=400.0), dict(r_over_a=0.5), dict(r_over_a=0.0),
    dict(n_rows=0), dict(n_mirror_periods=-1), dict(n_slab=1.0),
])
def test_design_invariants_rejected(kw):
    with pytest.raises(GeometryError):
        CavityDesign(**kw)


def test_spacings_and_radius():
    holes = build_lattice(CavityDesign())
    row1 = _row(holes, 410 * math.sqrt(3) / 2)
    gaps = np.diff(row1)
    # row 1 holes sit at half-integer positions: the two central gaps straddle the stretch
    assert np.allclose(gaps[np.abs(row1[:-1] + gaps / 2) < 300], 440.0)
    assert np.isclose(gaps[0], 410.0) and np.isclose(gaps[-1], 410.0)
    row2 = _row(holes, 2 * 410 * math.sqrt(3) / 2)
    centre = np.abs(row2) < 1e-9
    assert centre.any()
    assert np.allclose(np.diff(row2)[np.abs(row2[:-1]) < 1], 440.0)
    assert np.allclose(holes.radius, 0.293 * 410)
    assert math.isclose(holes.radius[0], 120.13, rel_tol=1e-12)


def test_waveguide_row_removed_and_row_pitch():
    holes = build_lattice(CavityDesign())
    assert not np.any(np.isclose(holes.y, 0.0))
    ys = np.unique(np.round(np.abs(holes.y), 9))
    assert np.allclose(np.diff(ys), 410 * math.sqrt(3) / 2)
    assert len(ys) == 7


def test_smallest_lattice_count():
    holes = build_lattice(CavityDesign(n_rows=1, n_mirror_periods=0))
    # one row on each side: 2 stretched periods plus two closure holes
    assert len(holes) == 2 * (2 + 2)
    assert not np.any(np.isclose(holes.y, 0.0))


@given(st.integers(1, 6), st.integers(0, 8))
def test_mirror_count_law(n_rows, n_mirror):
    a = len(build_lattice(CavityDesign(n_rows=n_rows, n_mirror_periods=n_mirror)))
    b = len(build_lattice(CavityDesign(n_rows=n_rows, n_mirror_periods=n_mirror + 1)))
    assert b - a == 2 * n_rows * 2


@given(st.floats(380, 460), st.floats(0.0, 60.0), st.floats(0.15, 0.33), st.integers(1, 5), st.integers(0, 5))
def test_exact_mirror_symmetry_and_no_overlap(a_m, stretch, r, n_rows, n_mirror):
    holes = build_lattice(CavityDesign(a_m=a_m, a_c=a_m + stretch, r_over_a=r, n_rows=n_rows,
                                       n_mirror_periods=n_mirror))
    pts = {(x, y) for x, y in holes.holes[:, :2]}
    assert {(-x, y) for x, y in pts} == pts
    assert {(x, -y) for x, y in pts} == pts
    xy = holes.holes[:, :2]
    d = np.hypot(*(xy[:, None, :] - xy[None, :, :]).transpose(2, 0, 1))
    np.fill_diagonal(d, np.inf)
    assert d.min() >= 2 * holes.radius[0] - 1e-9


def test_near_touching_design_is_valid():
    # every centre spacing is at least a_m, so r/a < 0.5 never overlaps
    holes = build_lattice(CavityDesign(r_over_a=0.499))
    assert len(holes) > 0


def test_overlap_check_flags_intersecting_holes():
    from phc_purcell.geometry import _check_overlap
    with pytest.raises(GeometryError, match="overlap"):
        _check_overlap(np.array([[0.0, 0.0, 120.0], [200.0, 0.0, 120.0]]))
    _check_overlap(np.array([[0.0, 0.0, 100.0], [200.0, 0.0, 100.0]]))


def test_rasterize_empty_is_uniform():
    d = CavityDesign()
    g = rasterize(HoleList(np.empty((0, 3)), (0, 0, 0, 0)), d, 8)
    assert np.all(g.eps == d.n_slab**2)


def test_single_hole_area():
    d = CavityDesign()
    res = 16
    dx = d.a_m / res
    r = 5 * dx
    holes = HoleList(np.array([[0.0, 0.0, r]]), (-r, r, -r, r))
    g = rasterize(holes, d, res, pml_cells=8)
    eps_s = d.n_slab**2
    area = np.sum((eps_s - g.eps) / (eps_s - 1)) * dx**2
    assert abs(area / (math.pi * r * r) - 1) < 0.01
    # the origin is a cell centre
    i, j = g.index_of(0.0, 0.0)
    assert np.allclose(g.coords()[0][i], 0.0) and np.allclose(g.coords()[1][j], 0.0)


def test_cell_values_bounded_and_boundary_cells_mixed():
    d = CavityDesign(n_rows=3, n_mirror_periods=2)
    holes = build_lattice(d)
    g = rasterize(holes, d, 8)
    eps_s = d.n_slab**2
    assert g.eps.min() >= 1.0 and g.eps.max() <= eps_s
    mixed = (g.eps > 1.0) & (g.eps < eps_s)
    assert mixed.any()
    # with this radius no cell is fully inside a hole at resolution 8 except near centres
    assert np.all((g.eps[mixed] > 1.0) & (g.eps[mixed] < eps_s))


def test_rasterize_rejects_low_resolution():
    d = CavityDesign()
    with pytest.raises(GeometryError):
        rasterize(build_lattice(d), d, 7)


def test_fill_factor_default_resolution():
    d = CavityDesign()
    holes = build_lattice(d)
    g = rasterize(holes, d, 16)
    assert abs(air_fill_factor(g, len(holes), d) / ANALYTIC_FILL - 1) < 1e-3
    assert math.isclose(ANALYTIC_FILL, 0.3114, abs_tol=5e-5)


def test_fill_factor_error_decreases_with_resolution():
    d = CavityDesign()
    holes = build_lattice(d)
    errs = [abs(air_fill_factor(rasterize(holes, d, res), len(holes), d) - ANALYTIC_FILL)
            for res in (8, 16, 32, 64)]
    assert all(b < a for a, b in zip(errs, errs[1:])), errs
