"""2D TE finite-difference time-domain solver (Ex, Ey, Hz).

Units are normalised inside the solver: one cell is the length unit and the
vacuum speed of light is 1, so the time step equals the Courant number.
Reported times are converted to units of ``a / c`` (``a`` = the grid's
normalisation period), which makes frequencies come out directly as ``a / lambda``.

Yee layout on an ``(nx, ny)`` cell grid::

    Hz[i, j]  cell centre          shape (nx, ny)
    Ex[i, j]  lower edge of cell   shape (nx, ny + 1)
    Ey[i, j]  left edge of cell    shape (nx + 1, ny)

The outer walls are perfect electric conductors; absorbing runs surround the
domain with a split-field (Berenger) PML whose rate profile grows as depth**3.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np
from numba import njit, prange

from .geometry import PermittivityGrid
from .modal import ModeField

log = logging.getLogger(__name__)

# skip probing the (often outdated) TBB layer
numba.config.THREADING_LAYER_PRIORITY = ["omp", "workqueue", "tbb"]

PML_GRADING = 3
BLOWUP_FACTOR = 1e12
_CHECK_EVERY = 256


class InstabilityError(RuntimeError):
    """Field growth beyond any physical bound; the run was aborted."""


@dataclass
class SimulationConfig:
    courant: float = 0.5
    n_steps: int = 20000
    pml_cells: int = 16
    pml_reflection_target: float = 1e-6
    probe_positions: list = field(default_factory=list)
    probe_component: str = "ey"
    snapshot_frequency: float | None = None
    boundary: str = "pml"
    snapshot_every: int | None = None
    threads: int | None = None

    def __post_init__(self):
        if not 0 < self.courant <= 1 / math.sqrt(2):
            raise ValueError(f"courant must lie in (0, 1/sqrt(2)], got {self.courant}")
        if self.pml_cells < 8:
            raise ValueError(f"pml_cells must be >= 8, got {self.pml_cells}")
        if not 0 < self.pml_reflection_target < 1:
            raise ValueError("pml_reflection_target must lie in (0, 1)")
        if self.boundary not in ("pml", "pec"):
            raise ValueError(f"unknown boundary {self.boundary!r}")
        if self.probe_component not in ("ex", "ey", "hz"):
            raise ValueError(f"unknown probe component {self.probe_component!r}")
        if self.n_steps < 1:
            raise ValueError("n_steps must be positive")
        self.probe_positions = [tuple(int(v) for v in p) for p in self.probe_positions]


@dataclass
class DipoleSource:
    """Gaussian-modulated sinusoidal current, switched off at ``10 * width``.

    ``bandwidth`` is the FWHM of the amplitude spectrum in units of a/lambda.
    With ``line=True`` the current fills the whole grid column ``position[0]``
    (a plane-wave launcher).
    """

    position: tuple[int, int]
    polarization: tuple[float, float] = (0.0, 1.0)
    center_frequency: float = 0.27
    bandwidth: float = 0.05
    amplitude: float = 1.0
    line: bool = False

    def __post_init__(self):
        norm = math.hypot(*self.polarization)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError(f"polarization must be a unit vector, |p| = {norm}")
        if not self.bandwidth > 0:
            raise ValueError("bandwidth must be positive")
        if not self.center_frequency > 0:
            raise ValueError("center_frequency must be positive")
        self.position = (int(self.position[0]), int(self.position[1]))

    @property
    def width(self) -> float:
        """Temporal standard deviation of the envelope (a/c units)."""
        return math.sqrt(2 * math.log(2)) / (math.pi * self.bandwidth)

    @property
    def delay(self) -> float:
        return 5.0 * self.width

    @property
    def off_time(self) -> float:
        return 10.0 * self.width

    def waveform(self, t):
        t = np.asarray(t, dtype=float)
        s = (t - self.delay) / self.width
        w = self.amplitude * np.exp(-0.5 * s * s) * np.sin(2 * np.pi * self.center_frequency * (t - self.delay))
        return np.where(t < self.off_time, w, 0.0)


@dataclass
class TimeSeries:
    dt: float
    samples: np.ndarray  # (n_probes, n_samples)
    source_off_step: int
    first_step: int = 1
    probe_positions: list = field(default_factory=list)
    component: str = "ey"
    mode_field: ModeField | None = None
    snapshots: list | None = None

    def __post_init__(self):
        self.samples = np.atleast_2d(np.asarray(self.samples, dtype=float))

    @property
    def n_samples(self) -> int:
        return self.samples.shape[1]

    @property
    def steps(self) -> np.ndarray:
        return self.first_step + np.arange(self.n_samples)

    @property
    def times(self) -> np.ndarray:
        return self.steps * self.dt

    def after_turn_off(self) -> "TimeSeries":
        k = max(self.source_off_step - self.first_step, 0)
        return TimeSeries(
            dt=self.dt,
            samples=self.samples[:, k:],
            source_off_step=self.source_off_step,
            first_step=self.first_step + k,
            probe_positions=list(self.probe_positions),
            component=self.component,
            mode_field=self.mode_field,
        )


# --- kernels -----------------------------------------------------------------

@njit(cache=True, parallel=True)
def _update_h(hzx, hzy, ex, ey, ahx, bhx, ahy, bhy):
    nx, ny = hzx.shape
    for i in prange(nx):
        for j in range(ny):
            hzx[i, j] = ahx[i] * hzx[i, j] - bhx[i] * (ey[i + 1, j] - ey[i, j])
            hzy[i, j] = ahy[j] * hzy[i, j] + bhy[j] * (ex[i, j + 1] - ex[i, j])


@njit(cache=True, parallel=True)
def _update_e(ex, ey, hzx, hzy, inv_ex, inv_ey, aey, bey, aex, bex):
    nx, ny = hzx.shape
    for i in prange(nx):
        for j in range(1, ny):
            curl = (hzx[i, j] + hzy[i, j]) - (hzx[i, j - 1] + hzy[i, j - 1])
            ex[i, j] = aey[j] * ex[i, j] + bey[j] * inv_ex[i, j] * curl
    for i in prange(1, nx):
        for j in range(ny):
            curl = (hzx[i, j] + hzy[i, j]) - (hzx[i - 1, j] + hzy[i - 1, j])
            ey[i, j] = aex[i] * ey[i, j] - bex[i] * inv_ey[i, j] * curl


@njit(cache=True, parallel=True)
def _accumulate(fx, fy, ex, ey, ph_re, ph_im):
    nx, ny = fx.shape
    ph = ph_re + 1j * ph_im
    for i in prange(nx):
        for j in range(ny):
            fx[i, j] += 0.5 * (ex[i, j] + ex[i, j + 1]) * ph
            fy[i, j] += 0.5 * (ey[i, j] + ey[i + 1, j]) * ph


def _pml_rate(n: int, pml: int, r_target: float, offset: float) -> np.ndarray:
    """Loss rate at positions ``k + offset`` (cell units, edges at integers)."""
    xi = np.arange(n + (1 if offset == 0.0 else 0)) + offset
    ncells = n
    depth = np.maximum(np.maximum(pml - xi, xi - (ncells - pml)), 0.0) / pml
    rate_max = -(PML_GRADING + 1) * math.log(r_target) / (2.0 * pml)
    return rate_max * depth**PML_GRADING


def _coefficients(rate: np.ndarray, dt: float) -> tuple[np.ndarray, np.ndarray]:
    a = np.exp(-rate * dt)
    with np.errstate(divide="ignore", invalid="ignore"):
        b = np.where(rate > 0, (1.0 - a) / np.where(rate > 0, rate, 1.0), dt)
    return a, b


class FdtdSolver:
    """Exclusive-use field state for one grid; call :meth:`step` to advance."""

    def __init__(self, grid: PermittivityGrid, config: SimulationConfig):
        if config.threads:
            numba.set_num_threads(min(config.threads, numba.config.NUMBA_NUM_THREADS))
        self.grid = grid
        self.config = config
        nx, ny = grid.nx, grid.ny
        self.dt = config.courant
        self.dt_norm = config.courant / grid.resolution
        eps = np.asarray(grid.eps, dtype=float)

        eps_ex = np.empty((nx, ny + 1))
        eps_ex[:, 1:-1] = 0.5 * (eps[:, 1:] + eps[:, :-1])
        eps_ex[:, 0] = eps[:, 0]
        eps_ex[:, -1] = eps[:, -1]
        eps_ey = np.empty((nx + 1, ny))
        eps_ey[1:-1] = 0.5 * (eps[1:] + eps[:-1])
        eps_ey[0] = eps[0]
        eps_ey[-1] = eps[-1]
        self.eps_ex, self.eps_ey = eps_ex, eps_ey
        self.inv_ex, self.inv_ey = 1.0 / eps_ex, 1.0 / eps_ey

        if config.boundary == "pml":
            p, r = config.pml_cells, config.pml_reflection_target
            if 2 * p >= min(nx, ny):
                raise ValueError("grid too small for the requested PML thickness")
            hx, hy = _pml_rate(nx, p, r, 0.5), _pml_rate(ny, p, r, 0.5)
            ex_, ey_ = _pml_rate(nx, p, r, 0.0), _pml_rate(ny, p, r, 0.0)
        else:
            hx, hy = np.zeros(nx), np.zeros(ny)
            ex_, ey_ = np.zeros(nx + 1), np.zeros(ny + 1)
        self.ahx, self.bhx = _coefficients(hx, self.dt)
        self.ahy, self.bhy = _coefficients(hy, self.dt)
        self.aex, self.bex = _coefficients(ex_, self.dt)  # for Ey, loss along x
        self.aey, self.bey = _coefficients(ey_, self.dt)  # for Ex, loss along y

        self.ex = np.zeros((nx, ny + 1))
        self.ey = np.zeros((nx + 1, ny))
        self.hzx = np.zeros((nx, ny))
        self.hzy = np.zeros((nx, ny))
        self.n = 0

    @property
    def hz(self) -> np.ndarray:
        return self.hzx + self.hzy

    def inside_pml(self, i: int, j: int) -> bool:
        if self.config.boundary != "pml":
            return False
        p = self.config.pml_cells
        return not (p <= i < self.grid.nx - p and p <= j < self.grid.ny - p)

    def step(self) -> None:
        _update_h(self.hzx, self.hzy, self.ex, self.ey, self.ahx, self.bhx, self.ahy, self.bhy)
        _update_e(self.ex, self.ey, self.hzx, self.hzy, self.inv_ex, self.inv_ey,
                  self.aey, self.bey, self.aex, self.bex)
        self.n += 1

    def inject(self, source: DipoleSource, current: float) -> None:
        """Add ``-dt J / eps`` for a current split over the two edges around a cell."""
        if current == 0.0:
            return
        i, j = source.position
        px, py = source.polarization
        k = 0.5 * self.dt * current
        if source.line:
            self.ex[i, :] -= k * px * self.inv_ex[i, :]
            self.ey[i, :] -= 2 * k * py * self.inv_ey[i, :]
            return
        if px:
            self.ex[i, j] -= k * px * self.inv_ex[i, j]
            self.ex[i, j + 1] -= k * px * self.inv_ex[i, j + 1]
        if py:
            self.ey[i, j] -= k * py * self.inv_ey[i, j]
            self.ey[i + 1, j] -= k * py * self.inv_ey[i + 1, j]

    def probe(self, i: int, j: int, component: str) -> float:
        if component == "ex":
            return 0.5 * (self.ex[i, j] + self.ex[i, j + 1])
        if component == "ey":
            return 0.5 * (self.ey[i, j] + self.ey[i + 1, j])
        return self.hzx[i, j] + self.hzy[i, j]

    def energy(self) -> float:
        """Discrete invariant of the leapfrog scheme at the current E time level.

        ``0.5 * [sum eps E^n.E^n + sum H^(n-1/2) H^(n+1/2)]``, exactly conserved
        (to round-off) in a lossless, source-free domain.
        """
        hz = self.hzx + self.hzy
        curl = (self.ex[:, 1:] - self.ex[:, :-1]) - (self.ey[1:, :] - self.ey[:-1, :])
        hz_next = hz + self.dt * curl
        return 0.5 * float(
            np.sum(self.eps_ex * self.ex**2) + np.sum(self.eps_ey * self.ey**2) + np.sum(hz * hz_next)
        )

    def max_field(self) -> float:
        return float(max(np.abs(self.ex).max(), np.abs(self.ey).max(), np.abs(self.hzx + self.hzy).max()))

    def centred_e(self) -> tuple[np.ndarray, np.ndarray]:
        return 0.5 * (self.ex[:, :-1] + self.ex[:, 1:]), 0.5 * (self.ey[:-1] + self.ey[1:])


def emitter_plane(grid: PermittivityGrid) -> np.ndarray:
    """Cells where emitters can sit: mostly-slab cells inside the crystal window."""
    midpoint = 0.5 * (1.0 + grid.n_slab**2)
    return grid.crystal_mask() & (np.asarray(grid.eps) >= midpoint)


def _check_source(solver: FdtdSolver, source: DipoleSource) -> None:
    i, j = source.position
    g = solver.grid
    if not (0 <= i < g.nx and 0 <= j < g.ny):
        raise ValueError(f"source position {source.position} outside the grid")
    if not source.line and solver.inside_pml(i, j):
        raise ValueError(f"source position {source.position} lies inside the PML region")


def run_fdtd(grid: PermittivityGrid, config: SimulationConfig, source: DipoleSource) -> TimeSeries:
    """Drive ``source`` for ``config.n_steps`` steps and record the probes.

    When ``config.snapshot_frequency`` is set, the running DFT of the
    cell-centred (Ex, Ey) at that frequency is accumulated over every step
    after source turn-off and attached as ``mode_field``.
    """
    solver = FdtdSolver(grid, config)
    _check_source(solver, source)
    probes = config.probe_positions or [source.position]
    for i, j in probes:
        if not (0 <= i < grid.nx and 0 <= j < grid.ny):
            raise ValueError(f"probe {(i, j)} outside the grid")

    dt = solver.dt_norm
    n_steps = config.n_steps
    off_step = int(math.ceil(source.off_time / dt))
    # current is sampled at half steps, between the H and E updates
    drive = source.waveform((np.arange(min(off_step + 1, n_steps)) + 0.5) * dt)
    peak = max(float(np.abs(drive).max()), 1e-300)

    out = np.zeros((len(probes), n_steps))
    comp = config.probe_component
    accumulate = config.snapshot_frequency is not None
    if accumulate:
        fx = np.zeros((grid.nx, grid.ny), dtype=complex)
        fy = np.zeros((grid.nx, grid.ny), dtype=complex)
        omega = 2 * np.pi * config.snapshot_frequency
    snapshots = [] if config.snapshot_every else None

    for n in range(n_steps):
        _update_h(solver.hzx, solver.hzy, solver.ex, solver.ey,
                  solver.ahx, solver.bhx, solver.ahy, solver.bhy)
        _update_e(solver.ex, solver.ey, solver.hzx, solver.hzy, solver.inv_ex, solver.inv_ey,
                  solver.aey, solver.bey, solver.aex, solver.bex)
        if n < len(drive):
            solver.inject(source, float(drive[n]))
        solver.n += 1
        for p, (i, j) in enumerate(probes):
            out[p, n] = solver.probe(i, j, comp)
        step = n + 1
        if accumulate and step >= off_step:
            phase = -omega * step * dt
            _accumulate(fx, fy, solver.ex, solver.ey, math.cos(phase), math.sin(phase))
        if snapshots is not None and step % config.snapshot_every == 0:
            snapshots.append(solver.hz.copy())
        if step % _CHECK_EVERY == 0 or step == n_steps:
            m = solver.max_field()
            if not math.isfinite(m) or m > BLOWUP_FACTOR * peak:
                raise InstabilityError(
                    f"field magnitude {m:.3e} exceeds {BLOWUP_FACTOR:.0e} x source peak "
                    f"{peak:.3e} at step {step} (courant={config.courant})"
                )

    mode = None
    if accumulate:
        mode = ModeField(ex=fx, ey=fy, dx=grid.dx, origin=grid.origin,
                         region=emitter_plane(grid), frequency=config.snapshot_frequency)
    return TimeSeries(
        dt=dt,
        samples=out,
        source_off_step=off_step,
        first_step=1,
        probe_positions=list(probes),
        component=comp,
        mode_field=mode,
        snapshots=snapshots,
    )


def ringdown(grid: PermittivityGrid, config: SimulationConfig, source: DipoleSource) -> TimeSeries:
    """Excite, switch off, and return only the free decay after turn-off."""
    series = run_fdtd(grid, config, source)
    tail = series.after_turn_off()
    tail.snapshots = series.snapshots
    return tail
