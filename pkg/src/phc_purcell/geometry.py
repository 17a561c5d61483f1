"""Double-heterostructure photonic-crystal cavity: hole lattice and permittivity grid.

The cavity is a W1 waveguide (one missing row along x) in a hexagonal lattice
of air holes. Two central longitudinal periods are stretched from ``a_m`` to
``a_c``; every hole outside that stretch region is shifted outward rigidly by
``a_c - a_m``. Transverse row spacing stays ``a_m * sqrt(3) / 2``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

OVERLAP_TOL_NM = 1e-9


class GeometryError(ValueError):
    """Raised for invalid or self-overlapping designs."""


@dataclass(frozen=True)
class CavityDesign:
    a_m: float = 410.0
    a_c: float = 440.0
    r_over_a: float = 0.293
    n_rows: int = 7
    n_mirror_periods: int = 10
    n_slab: float = 2.7
    lambda_target: float = 1538.0
    h_eff: float = 250.0

    def __post_init__(self):
        if not self.a_m > 0:
            raise GeometryError(f"a_m must be positive, got {self.a_m}")
        if self.a_c < self.a_m:
            raise GeometryError(f"a_c ({self.a_c}) must be >= a_m ({self.a_m})")
        if not 0 < self.r_over_a < 0.5:
            raise GeometryError(f"r_over_a must lie in (0, 0.5), got {self.r_over_a}")
        if self.n_rows < 1:
            raise GeometryError("n_rows must be >= 1")
        if self.n_mirror_periods < 0:
            raise GeometryError("n_mirror_periods must be >= 0")
        if not self.n_slab > 1:
            raise GeometryError("n_slab must exceed 1")
        if not self.h_eff > 0:
            raise GeometryError("h_eff must be positive")

    @property
    def radius(self) -> float:
        return self.r_over_a * self.a_m


@dataclass(frozen=True)
class HoleList:
    holes: np.ndarray  # (N, 3): x, y, radius in nm
    bounding_box: tuple[float, float, float, float]

    def __len__(self) -> int:
        return len(self.holes)

    @property
    def x(self) -> np.ndarray:
        return self.holes[:, 0]

    @property
    def y(self) -> np.ndarray:
        return self.holes[:, 1]

    @property
    def radius(self) -> np.ndarray:
        return self.holes[:, 2]


def _stretch(u: np.ndarray, a_m: float, a_c: float) -> np.ndarray:
    """Map unstretched longitudinal coordinates onto the heterostructure."""
    inner = np.abs(u) <= a_m
    return np.where(inner, u * (a_c / a_m), u + np.sign(u) * (a_c - a_m))


def _row_positions(j: int, n_half: int) -> np.ndarray:
    """Longitudinal indices (in units of a_m, unstretched) of holes in row ``j``.

    Every row extends to ``|u| <= n_half + 1/2`` periods so that the lattice
    edge is closed; even rows hold ``2 n_half + 1`` holes, odd rows ``2 n_half + 2``.
    """
    if j % 2 == 0:
        k = np.arange(-n_half, n_half + 1, dtype=float)
    else:
        k = np.arange(-n_half - 1, n_half + 1, dtype=float) + 0.5
    return k


def build_lattice(design: CavityDesign) -> HoleList:
    """Hole centres and radii for the double-heterostructure cavity."""
    a_m, a_c = design.a_m, design.a_c
    r = design.radius
    n_half = 1 + design.n_mirror_periods
    row_pitch = a_m * math.sqrt(3.0) / 2.0

    rows = []
    for j in range(1, design.n_rows + 1):
        x = _stretch(_row_positions(j, n_half) * a_m, a_m, a_c)
        y = np.full_like(x, j * row_pitch)
        # generate both half-planes from the same coordinates, exact mirror
        rows.append(np.column_stack([x, y]))
        rows.append(np.column_stack([x, -y]))
    xy = np.concatenate(rows)
    holes = np.column_stack([xy, np.full(len(xy), r)])

    _check_overlap(holes)
    bbox = (
        float(holes[:, 0].min() - r),
        float(holes[:, 0].max() + r),
        float(holes[:, 1].min() - r),
        float(holes[:, 1].max() + r),
    )
    return HoleList(holes=holes, bounding_box=bbox)


def _check_overlap(holes: np.ndarray) -> None:
    if len(holes) < 2:
        return
    rmax = holes[:, 2].max()
    tree = cKDTree(holes[:, :2])
    for i, k in tree.query_pairs(2 * rmax + OVERLAP_TOL_NM):
        d = math.hypot(holes[i, 0] - holes[k, 0], holes[i, 1] - holes[k, 1])
        if d < holes[i, 2] + holes[k, 2] - OVERLAP_TOL_NM:
            raise GeometryError(
                f"holes at ({holes[i, 0]:.3f}, {holes[i, 1]:.3f}) and "
                f"({holes[k, 0]:.3f}, {holes[k, 1]:.3f}) overlap (distance {d:.3f} nm)"
            )


@dataclass
class PermittivityGrid:
    """Relative permittivity on a uniform square-cell grid.

    ``eps[i, j]`` is the cell centred at ``origin + (i, j) * dx``; axis 0 is x.
    ``a_nm`` is the normalisation length (the mirror period), so the grid
    resolution in cells per period is ``a_nm / dx``. ``crystal`` is the
    index window ``(i0, i1, j0, j1)`` (half-open) excluding PML and margin.
    """

    eps: np.ndarray
    dx: float
    origin: tuple[float, float]
    n_slab: float
    a_nm: float
    pml_cells: int = 0
    crystal: tuple[int, int, int, int] | None = None
    meta: dict = field(default_factory=dict)

    @property
    def nx(self) -> int:
        return self.eps.shape[0]

    @property
    def ny(self) -> int:
        return self.eps.shape[1]

    @property
    def resolution(self) -> float:
        return self.a_nm / self.dx

    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        x = self.origin[0] + self.dx * np.arange(self.nx)
        y = self.origin[1] + self.dx * np.arange(self.ny)
        return x, y

    def index_of(self, x_nm: float, y_nm: float) -> tuple[int, int]:
        i = int(round((x_nm - self.origin[0]) / self.dx))
        j = int(round((y_nm - self.origin[1]) / self.dx))
        return i, j

    def crystal_mask(self) -> np.ndarray:
        mask = np.zeros(self.eps.shape, dtype=bool)
        if self.crystal is None:
            p = self.pml_cells
            mask[p:self.nx - p, p:self.ny - p] = True
        else:
            i0, i1, j0, j1 = self.crystal
            mask[i0:i1, j0:j1] = True
        return mask


def _half_cells(extent_nm: float, dx: float) -> int:
    return int(math.ceil(extent_nm / dx - 1e-9))


def rasterize(
    holes: HoleList,
    design: CavityDesign,
    resolution: int = 16,
    margin_periods: float = 1.0,
    pml_cells: int = 16,
    supersample: int = 24,
) -> PermittivityGrid:
    """Area-averaged permittivity map of the patterned slab.

    The grid is centred on the cavity with a cell centre at the origin. Outside
    the crystal the slab continues unpatterned for ``margin_periods`` mirror
    periods and then through the PML allowance.
    """
    if resolution < 8:
        raise GeometryError(f"resolution must be >= 8 cells per a_m, got {resolution}")
    if supersample < 16:
        raise GeometryError("supersample must be >= 16")
    dx = design.a_m / resolution
    eps_slab = design.n_slab**2

    if len(holes):
        x_min, x_max, y_min, y_max = holes.bounding_box
        half_x = max(abs(x_min), abs(x_max))
        half_y = max(abs(y_min), abs(y_max))
    else:
        half_x = half_y = design.a_m
    cx = _half_cells(half_x, dx)
    cy = _half_cells(half_y, dx)
    pad = int(math.ceil(margin_periods * resolution)) + pml_cells
    nx = 2 * (cx + pad) + 1
    ny = 2 * (cy + pad) + 1
    origin = (-(nx // 2) * dx, -(ny // 2) * dx)

    air = np.zeros((nx, ny))
    # sub-rows at midpoints in y; along x the chord overlap is exact
    sub = (np.arange(supersample) + 0.5) / supersample - 0.5
    for hx, hy, hr in holes.holes:
        i_lo = max(int(math.floor((hx - hr - origin[0]) / dx - 0.5)), 0)
        i_hi = min(int(math.ceil((hx + hr - origin[0]) / dx + 0.5)), nx - 1)
        j_lo = max(int(math.floor((hy - hr - origin[1]) / dx - 0.5)), 0)
        j_hi = min(int(math.ceil((hy + hr - origin[1]) / dx + 0.5)), ny - 1)
        ii = np.arange(i_lo, i_hi + 1)
        jj = np.arange(j_lo, j_hi + 1)
        ys = (origin[1] + dx * (jj[:, None] + sub[None, :])) - hy  # (nj, ns)
        half_chord = np.sqrt(np.clip(hr * hr - ys * ys, 0.0, None))
        x_left = origin[0] + dx * (ii - 0.5) - hx  # (ni,)
        lo = np.maximum(x_left[:, None, None], -half_chord[None, :, :])
        hi = np.minimum(x_left[:, None, None] + dx, half_chord[None, :, :])
        frac = np.clip(hi - lo, 0.0, None).mean(axis=2) / dx
        air[i_lo:i_hi + 1, j_lo:j_hi + 1] += frac

    np.clip(air, 0.0, 1.0, out=air)
    eps = eps_slab - (eps_slab - 1.0) * air
    crystal = (pad, nx - pad, pad, ny - pad)
    return PermittivityGrid(
        eps=eps,
        dx=dx,
        origin=origin,
        n_slab=design.n_slab,
        a_nm=design.a_m,
        pml_cells=pml_cells,
        crystal=crystal,
    )


def air_fill_factor(grid: PermittivityGrid, n_holes: int, design: CavityDesign) -> float:
    """Air-equivalent area per hexagonal unit cell, from the rasterised map.

    The analytic value for the mirror lattice is ``2 pi / sqrt(3) * (r/a)^2``.
    """
    eps_slab = design.n_slab**2
    air_area = np.sum((eps_slab - grid.eps) / (eps_slab - 1.0)) * grid.dx**2
    unit_cell = design.a_m**2 * math.sqrt(3.0) / 2.0
    return float(air_area / (n_holes * unit_cell))
