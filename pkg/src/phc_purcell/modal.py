"""Resonance extraction and mode-field metrics.

Resonances come from a matrix-pencil harmonic inversion of a ringdown; the
Lorentzian fit of the power spectrum is kept as an independent cross-check.
Mode volume and the in-plane spatial averaging factor are computed from the
narrowband field accumulated by the solver.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

SV_THRESHOLD = 1e-8
MAX_PENCIL = 1024


class ModalError(ValueError):
    pass


class NoResonanceError(ModalError):
    """Harmonic inversion found no decaying pole in the requested band."""


@dataclass
class Resonance:
    frequency: float  # a / lambda (or 1 / time unit of the signal)
    wavelength_nm: float | None
    q: float
    amplitude: float
    phase: float
    decay_rate: float = 0.0

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ModeField:
    """Complex in-plane field on cell centres.

    ``region`` marks the emitter plane S (slab material inside the crystal
    window); ``None`` means the whole grid.
    """

    ex: np.ndarray
    ey: np.ndarray
    dx: float
    origin: tuple[float, float] = (0.0, 0.0)
    region: np.ndarray | None = None
    frequency: float | None = None

    def __post_init__(self):
        self.ex = np.asarray(self.ex, dtype=complex)
        self.ey = np.asarray(self.ey, dtype=complex)
        if self.ex.shape != self.ey.shape:
            raise ModalError("Ex and Ey must share a shape")
        if self.region is not None:
            self.region = np.asarray(self.region, dtype=bool)
            if self.region.shape != self.ex.shape:
                raise ModalError("region mask does not match the field shape")

    @property
    def intensity(self) -> np.ndarray:
        return np.abs(self.ex) ** 2 + np.abs(self.ey) ** 2

    def scaled(self, c: complex) -> "ModeField":
        return ModeField(self.ex * c, self.ey * c, self.dx, self.origin, self.region, self.frequency)


@dataclass
class ModeMetrics:
    v_eff_normalized: float
    v_eff_physical: float
    eta_spatial: float | None = None
    max_position: tuple[int, int] | None = None
    lambda0: float | None = None
    n_slab: float | None = None

    def to_dict(self) -> dict:
        d = asdict(self)
        if self.max_position is not None:
            d["max_position"] = [int(v) for v in self.max_position]
        return d


# --- harmonic inversion --------------------------------------------------------

def _as_signal(signal, probe: int):
    if hasattr(signal, "samples"):
        data = np.asarray(signal.samples)
        if data.ndim == 2:
            data = data[probe]
        return data, float(signal.dt)
    data, dt = signal
    return np.asarray(data), float(dt)


def matrix_pencil(y: np.ndarray, order: int | None = None, pencil: int | None = None,
                  threshold: float = SV_THRESHOLD):
    """Poles ``z`` and complex amplitudes ``c`` with ``y[k] ~ sum c z**k``.

    The model order is the number of singular values of the Hankel data matrix
    above ``threshold`` times the largest, capped at ``order``.
    """
    y = np.asarray(y)
    n = len(y)
    L = pencil or min(n // 3, MAX_PENCIL)
    L = max(L, 1)
    if n - L < 1:
        raise ModalError("signal too short for the requested pencil")
    idx = np.arange(n - L)[:, None] + np.arange(L + 1)[None, :]
    hankel = y[idx]
    _, s, vh = np.linalg.svd(hankel, full_matrices=False)
    if s.size == 0 or s[0] == 0.0:
        return np.empty(0, complex), np.empty(0, complex)
    m = int(np.sum(s > threshold * s[0]))
    if order is not None:
        m = min(m, order)
    m = min(m, L)
    if m == 0:
        return np.empty(0, complex), np.empty(0, complex)
    v = vh[:m].conj().T
    v1, v2 = v[:-1], v[1:]
    z = np.linalg.eigvals(np.linalg.pinv(v1) @ v2)
    basis = z[None, :] ** np.arange(n)[:, None]
    c, *_ = np.linalg.lstsq(basis, y.astype(complex), rcond=None)
    return z, c


def find_resonances(signal, band: tuple[float, float] | None = None, max_modes: int = 4,
                    order: int | None = None, probe: int = 0, a_nm: float | None = None,
                    max_samples: int = 8192) -> list[Resonance]:
    """Damped-sinusoid decomposition of a ringdown.

    ``signal`` is a :class:`~phc_purcell.fdtd.TimeSeries` (post turn-off) or a
    ``(samples, dt)`` pair. The pencil order comes from singular-value
    thresholding, optionally capped by ``order`` (a real signal needs two poles
    per mode). Returns at most ``max_modes`` in-band resonances sorted by
    decreasing amplitude; growing or undamped poles are discarded.
    """
    y, dt = _as_signal(signal, probe)
    if len(y) < 4 * max_modes:
        raise ModalError(f"need >= {4 * max_modes} samples, got {len(y)}")
    nyquist = 0.5 / dt
    if band is None:
        band = (0.0, nyquist)
    lo, hi = band
    if not (0 <= lo < hi <= nyquist * (1 + 1e-12)):
        raise ModalError(f"band {band} not inside (0, Nyquist={nyquist:g})")
    y = y[:max_samples]
    is_real = not np.iscomplexobj(y)
    z, c = matrix_pencil(y, order=order)

    out = []
    for zk, ck in zip(z, c):
        if zk == 0:
            continue
        freq = np.angle(zk) / (2 * np.pi * dt)
        gamma = -np.log(np.abs(zk)) / dt
        if is_real:
            if freq <= 0:
                continue
            amp = 2 * abs(ck)
        else:
            amp = abs(ck)
        if not (lo <= freq <= hi) or gamma <= 0:
            continue
        out.append(Resonance(
            frequency=float(freq),
            wavelength_nm=float(a_nm / freq) if a_nm else None,
            q=float(np.pi * freq / gamma),
            amplitude=float(amp),
            phase=float(np.angle(ck)),
            decay_rate=float(gamma),
        ))
    out.sort(key=lambda r: -r.amplitude)
    return out[:max_modes]


def q_from_linewidth(lambda0: float, fwhm: float) -> float:
    """Quality factor ``lambda0 / fwhm`` (any consistent units, incl. frequency)."""
    if not (lambda0 > 0 and fwhm > 0):
        raise ModalError("lambda0 and fwhm must be positive")
    if not fwhm < lambda0:
        raise ModalError(f"fwhm ({fwhm}) must be smaller than lambda0 ({lambda0})")
    return lambda0 / fwhm


def spectral_q(signal, band: tuple[float, float], probe: int = 0, pad: int = 8) -> tuple[float, float, float]:
    """Cross-check path: Lorentzian fit of the power spectrum.

    Returns ``(f0, fwhm, q)`` with ``q = q_from_linewidth(f0, fwhm)``.
    """
    from .spectra import fit_lorentzian_curve

    y, dt = _as_signal(signal, probe)
    n = len(y)
    nfft = 1 << int(math.ceil(math.log2(n * pad)))
    power = np.abs(np.fft.rfft(y, nfft)) ** 2
    f = np.fft.rfftfreq(nfft, dt)
    sel = (f >= band[0]) & (f <= band[1])
    fs, ps = f[sel], power[sel]
    k = int(np.argmax(ps))
    # fit within a few linewidths of the peak
    half = ps[k] / 2
    above = np.nonzero(ps >= half)[0]
    width = max(fs[above[-1]] - fs[above[0]], 4 * (fs[1] - fs[0]))
    win = np.abs(fs - fs[k]) <= 5 * width
    f0, fwhm, *_ = fit_lorentzian_curve(fs[win], ps[win], with_offset=False)
    return f0, fwhm, q_from_linewidth(f0, fwhm)


# --- field metrics -----------------------------------------------------------------

def _nonpml_mask(shape, pml_cells: int) -> np.ndarray:
    mask = np.zeros(shape, dtype=bool)
    p = pml_cells
    mask[p:shape[0] - p, p:shape[1] - p] = True
    return mask


def mode_volume(mode: ModeField, eps, h_eff: float, lambda0: float, n_slab: float) -> ModeMetrics:
    """Effective volume ``h_eff * sum(eps |E|^2) dx^2 / max(eps |E|^2)``.

    ``eps`` is a :class:`PermittivityGrid` (its PML cells are excluded) or a
    bare array congruent with the field. The normalised volume is in units of
    ``(lambda0 / n_slab)**3``.
    """
    if hasattr(eps, "eps"):
        eps_arr, pml = np.asarray(eps.eps), eps.pml_cells
        if not math.isclose(eps.dx, mode.dx, rel_tol=1e-12):
            raise ModalError("mode field and permittivity grid have different cell sizes")
    else:
        eps_arr, pml = np.asarray(eps), 0
    if eps_arr.shape != mode.ex.shape:
        raise ModalError(f"grid shape {eps_arr.shape} does not match field shape {mode.ex.shape}")
    w = eps_arr * mode.intensity
    w = np.where(_nonpml_mask(w.shape, pml), w, 0.0)
    peak = w.max()
    if not peak > 0 or not np.isfinite(peak):
        raise ModalError("mode field is identically zero")
    area = w.sum() * mode.dx**2 / peak
    v_phys = h_eff * area
    idx = np.unravel_index(int(np.argmax(w)), w.shape)
    return ModeMetrics(
        v_eff_normalized=float(v_phys / (lambda0 / n_slab) ** 3),
        v_eff_physical=float(v_phys),
        max_position=(int(idx[0]), int(idx[1])),
        lambda0=float(lambda0),
        n_slab=float(n_slab),
    )


def spatial_factor(mode: ModeField) -> float:
    """In-plane averaging factor ``sum|E|^4 / (max|E|^2 * sum|E|^2)`` over S."""
    i2 = mode.intensity
    if mode.region is not None:
        i2 = i2[mode.region]
    peak = i2.max() if i2.size else 0.0
    if not peak > 0:
        raise ModalError("mode field is identically zero on the emitter plane")
    # normalise first so the ratio is exactly scale-free
    u = i2 / peak
    return float(np.sum(u * u) / np.sum(u))


def mode_metrics(mode: ModeField, grid, h_eff: float, lambda0: float) -> ModeMetrics:
    m = mode_volume(mode, grid, h_eff, lambda0, grid.n_slab)
    m.eta_spatial = spatial_factor(mode)
    return m
