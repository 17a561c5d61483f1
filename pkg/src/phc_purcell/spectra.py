"""Lorentzian line fits, Michelson envelope linewidths, and L-L threshold search."""
from __future__ import annotations

import math
import warnings
from dataclasses import asdict, dataclass

import numpy as np
from scipy.optimize import OptimizeWarning, curve_fit

NM_PER_MM = 1e6
DEFAULT_RESOLUTION_NM = 0.15
NO_THRESHOLD_SLOPE_RATIO = 1.5


class SpectrumError(ValueError):
    pass


class ResolutionLimitedWarning(UserWarning):
    """Fitted linewidth is below twice the spectrometer resolution."""


@dataclass
class Spectrum:
    wavelength: np.ndarray
    intensity: np.ndarray
    resolution: float = DEFAULT_RESOLUTION_NM

    def __post_init__(self):
        self.wavelength = np.asarray(self.wavelength, dtype=float)
        self.intensity = np.asarray(self.intensity, dtype=float)
        if self.wavelength.shape != self.intensity.shape or self.wavelength.ndim != 1:
            raise SpectrumError("wavelength and intensity must be 1D arrays of equal length")
        if len(self.wavelength) < 8:
            raise SpectrumError("a spectrum needs at least 8 points")
        if np.any(np.diff(self.wavelength) <= 0):
            raise SpectrumError("wavelength must be strictly increasing")
        if np.any(self.intensity < 0):
            raise SpectrumError("intensity must be non-negative")


@dataclass
class Interferogram:
    delay: np.ndarray  # mm
    contrast: np.ndarray

    def __post_init__(self):
        self.delay = np.asarray(self.delay, dtype=float)
        self.contrast = np.asarray(self.contrast, dtype=float)
        if self.delay.shape != self.contrast.shape:
            raise SpectrumError("delay and contrast must have equal length")
        if np.any(self.delay < 0) or np.any(np.diff(self.delay) <= 0):
            raise SpectrumError("delay must be non-negative and increasing")


@dataclass
class LLCurve:
    pump_power: np.ndarray  # uW
    output_intensity: np.ndarray
    linewidth: np.ndarray | None = None  # nm

    def __post_init__(self):
        self.pump_power = np.asarray(self.pump_power, dtype=float)
        self.output_intensity = np.asarray(self.output_intensity, dtype=float)
        if self.linewidth is not None:
            self.linewidth = np.asarray(self.linewidth, dtype=float)
        if np.any(self.pump_power <= 0) or np.any(np.diff(self.pump_power) <= 0):
            raise SpectrumError("pump powers must be positive and strictly increasing")


@dataclass
class LorentzianFit:
    lambda0: float
    fwhm: float
    amplitude: float
    offset: float
    std_errors: dict
    fwhm_deconvolved: float
    resolution_limited: bool

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class ThresholdResult:
    threshold_power: float
    slope_below: float
    slope_above: float
    slope_errors: tuple[float, float]
    threshold_detected: bool
    linewidth_kink: float | None = None
    breakpoint_index: int | None = None

    def to_dict(self) -> dict:
        return asdict(self)


def lorentzian(x, x0, fwhm, amplitude, offset=0.0):
    hw2 = (0.5 * fwhm) ** 2
    return offset + amplitude * hw2 / ((x - x0) ** 2 + hw2)


def fit_lorentzian_curve(x, y, with_offset: bool = True):
    """Least-squares Lorentzian; returns ``(x0, fwhm, amplitude, offset, errors)``."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    k = int(np.argmax(y))
    base = float(np.min(y)) if with_offset else 0.0
    amp = float(y[k] - base)
    above = np.nonzero(y - base >= 0.5 * amp)[0]
    width = float(x[above[-1]] - x[above[0]]) if len(above) > 1 else float(x[1] - x[0])
    width = max(width, float(np.min(np.diff(x))))
    # centre and scale the abscissa so the fit is well conditioned
    xc, xs = float(x[k]), width
    u = (x - xc) / xs
    ys = amp if amp > 0 else 1.0
    v = y / ys
    if with_offset:
        p0 = [0.0, 1.0, 1.0, base / ys]
        model = lambda u, u0, w, a, c: lorentzian(u, u0, w, a, c)  # noqa: E731
    else:
        p0 = [0.0, 1.0, 1.0]
        model = lambda u, u0, w, a: lorentzian(u, u0, w, a)  # noqa: E731
    with warnings.catch_warnings():
        # exact model data leave no residual to scale the covariance; errors come back as nan
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, pcov = curve_fit(model, u, v, p0=p0, xtol=1e-15, ftol=1e-15, gtol=1e-15, maxfev=20000)
    perr = np.sqrt(np.clip(np.diag(pcov), 0.0, None)) if np.all(np.isfinite(pcov)) else np.full(len(popt), np.nan)
    x0 = xc + popt[0] * xs
    fwhm = abs(popt[1]) * xs
    a = popt[2] * ys
    c = popt[3] * ys if with_offset else 0.0
    errors = {
        "lambda0": float(perr[0] * xs),
        "fwhm": float(perr[1] * xs),
        "amplitude": float(perr[2] * ys),
        "offset": float(perr[3] * ys) if with_offset else 0.0,
    }
    return float(x0), float(fwhm), float(a), float(c), errors


def fit_lorentzian(spec: Spectrum) -> LorentzianFit:
    """Fit ``offset + A (G/2)^2 / ((l - l0)^2 + (G/2)^2)`` to a single-peak spectrum."""
    if spec.intensity.max() < 3 * np.median(spec.intensity):
        raise SpectrumError("no dominant peak: maximum is below 3x the median intensity")
    x0, fwhm, amp, off, err = fit_lorentzian_curve(spec.wavelength, spec.intensity)
    limited = fwhm < 2 * spec.resolution
    if limited:
        warnings.warn(
            f"fitted FWHM {fwhm:.4g} nm is below 2x the resolution ({spec.resolution} nm); "
            "use interferometric linewidth instead",
            ResolutionLimitedWarning,
            stacklevel=2,
        )
    return LorentzianFit(
        lambda0=x0,
        fwhm=fwhm,
        amplitude=amp,
        offset=off,
        std_errors=err,
        fwhm_deconvolved=max(fwhm - spec.resolution, 0.0),
        resolution_limited=bool(limited),
    )


def interferogram_model(delay, lambda0: float, fwhm: float, visibility: float = 1.0):
    """Fringe-envelope contrast of a Lorentzian line, ``V exp(-pi fwhm d / lambda0^2)``.

    ``delay`` in mm, ``lambda0`` and ``fwhm`` in nm.
    """
    if not (lambda0 > 0 and fwhm > 0):
        raise SpectrumError("lambda0 and fwhm must be positive")
    d_nm = np.asarray(delay, dtype=float) * NM_PER_MM
    return visibility * np.exp(-math.pi * fwhm * d_nm / lambda0**2)


def coherence_length_mm(lambda0: float, fwhm: float) -> float:
    """Delay at which the envelope falls to 1/e."""
    return lambda0**2 / (math.pi * fwhm) / NM_PER_MM


def fit_interferogram(ifg: Interferogram, lambda0: float, relative_noise: bool = False) -> tuple[float, float]:
    """Linewidth (nm) and its standard error from the fringe-envelope decay.

    The visibility is a free amplitude capped at 1. With ``relative_noise``
    the residuals are weighted by the inverse of a log-linear pre-fit of the
    envelope, the matched estimator when the noise is proportional to the
    contrast; otherwise the fit is unweighted.
    """
    d, c = ifg.delay, ifg.contrast
    if len(d) < 8:
        raise SpectrumError("an interferogram needs at least 8 points")
    pos = c > 0
    if pos.sum() < 3:
        raise SpectrumError("contrast has fewer than 3 positive points")
    slope, intercept = np.polyfit(d[pos], np.log(c[pos]), 1)
    if not slope < 0:
        raise SpectrumError("contrast does not decay with delay")
    rate = -slope  # per mm
    if rate * (d[-1] - d[0]) < 1e-3:
        raise SpectrumError("contrast decay across the scan is negligible")
    v0 = min(float(np.exp(intercept)), 1.0)

    def model(dd, v, r):
        return v * np.exp(-r * dd)

    sigma = np.exp(intercept + slope * d) if relative_noise else None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", OptimizeWarning)
        popt, pcov = curve_fit(model, d, c, p0=[v0 * (1 - 1e-9), rate], sigma=sigma,
                               bounds=([0.0, 0.0], [1.0, np.inf]),
                               xtol=1e-15, ftol=1e-15, gtol=1e-15, max_nfev=10000)
    r_fit = popt[1]
    r_err = math.sqrt(pcov[1, 1]) if np.isfinite(pcov[1, 1]) else float("nan")
    scale = lambda0**2 / (math.pi * NM_PER_MM)
    return float(r_fit * scale), float(r_err * scale)


def _hinge_fit(x: np.ndarray, y: np.ndarray, min_points: int = 3):
    """Continuous two-segment line with a breakpoint at one of the samples.

    Every admissible breakpoint is tried and the one with the smallest squared
    residual wins, so the optimum is global over the sample grid.
    """
    n = len(x)
    if n < 2 * min_points:
        raise SpectrumError(f"need at least {2 * min_points} points, got {n}")
    best = None
    # a breakpoint at sample k gives k+1 points on the lower segment, n-k on the upper
    for k in range(min_points - 1, n - min_points + 1):
        hinge = np.clip(x - x[k], 0.0, None)
        design = np.column_stack([np.ones(n), x, hinge])
        coef, *_ = np.linalg.lstsq(design, y, rcond=None)
        rss = float(np.sum((y - design @ coef) ** 2))
        if best is None or rss < best[0] - 1e-12 * max(abs(best[0]), 1e-300):
            best = (rss, k, coef, design)
    rss, k, coef, design = best
    dof = max(n - 3, 1)
    cov = np.linalg.pinv(design.T @ design) * (rss / dof)
    s_below = float(coef[1])
    s_above = float(coef[1] + coef[2])
    e_below = math.sqrt(max(cov[1, 1], 0.0))
    e_above = math.sqrt(max(cov[1, 1] + cov[2, 2] + 2 * cov[1, 2], 0.0))
    return k, s_below, s_above, (e_below, e_above)


def threshold_analysis(ll: LLCurve) -> ThresholdResult:
    """Lasing-threshold estimate from the kink of the log-log L-L curve."""
    if np.any(ll.output_intensity <= 0):
        raise SpectrumError("output intensity must be positive for a log-log fit")
    x = np.log(ll.pump_power)
    y = np.log(ll.output_intensity)
    k, s_lo, s_hi, errs = _hinge_fit(x, y)
    ratio = s_hi / s_lo if s_lo != 0 else math.inf
    detected = bool(ratio >= NO_THRESHOLD_SLOPE_RATIO)

    kink = None
    if ll.linewidth is not None:
        if np.any(ll.linewidth <= 0):
            raise SpectrumError("linewidths must be positive")
        kl, *_ = _hinge_fit(ll.pump_power, np.log(ll.linewidth))
        kink = float(ll.pump_power[kl])
    return ThresholdResult(
        threshold_power=float(ll.pump_power[k]),
        slope_below=s_lo,
        slope_above=s_hi,
        slope_errors=errs,
        threshold_detected=detected,
        linewidth_kink=kink,
        breakpoint_index=int(k),
    )
