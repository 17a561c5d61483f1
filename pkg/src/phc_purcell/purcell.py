"""Spontaneous-emission enhancement chain for an emitter ensemble in a cavity.

``F_p = 3 / (4 pi^2) * Q / V``  with ``V`` in units of ``(lambda / n)^3``, and the
ensemble enhancement ``F = dipole_factor * eta_spatial * F_p``. Here
``dipole_factor`` is 1/2 for random in-plane dipole orientation and
``eta_spatial`` is the average over random emitter positions in the slab plane.
"""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

PURCELL_PREFACTOR = 3.0 / (4.0 * math.pi**2)
DEFAULT_DIPOLE_FACTOR = 0.5
DEFAULT_ETA_SPATIAL = 0.17

EMITTER_LIMITED = "emitter-limited"
HARMONIC = "harmonic"


class PurcellError(ValueError):
    pass


def _positive(**kw):
    for name, value in kw.items():
        if not (value > 0 and math.isfinite(value)):
            raise PurcellError(f"{name} must be positive and finite, got {value}")


def _fraction(**kw):
    for name, value in kw.items():
        if not 0 < value <= 1:
            raise PurcellError(f"{name} must lie in (0, 1], got {value}")


def purcell_max(q: float, v_eff_normalized: float) -> float:
    """Maximal Purcell factor for an ideally placed, aligned, resonant dipole."""
    _positive(q=q, v_eff_normalized=v_eff_normalized)
    return PURCELL_PREFACTOR * q / v_eff_normalized


def ensemble_enhancement(f_p: float, dipole_factor: float = DEFAULT_DIPOLE_FACTOR,
                         eta_spatial: float = DEFAULT_ETA_SPATIAL) -> float:
    _positive(f_p=f_p)
    _fraction(dipole_factor=dipole_factor, eta_spatial=eta_spatial)
    return dipole_factor * eta_spatial * f_p


def q_per_enhancement(v_eff_normalized: float, dipole_factor: float = DEFAULT_DIPOLE_FACTOR,
                      eta_spatial: float = DEFAULT_ETA_SPATIAL) -> float:
    """The constant ``D`` in ``F = Q_em / D``; never stored, always derived."""
    _positive(v_eff_normalized=v_eff_normalized)
    _fraction(dipole_factor=dipole_factor, eta_spatial=eta_spatial)
    return 1.0 / (dipole_factor * eta_spatial * PURCELL_PREFACTOR / v_eff_normalized)


def invert_for_q_em(f_ensemble: float, v_eff_normalized: float,
                    dipole_factor: float = DEFAULT_DIPOLE_FACTOR,
                    eta_spatial: float = DEFAULT_ETA_SPATIAL) -> float:
    """Emitter quality factor that reproduces a measured ensemble enhancement."""
    _positive(f_ensemble=f_ensemble, v_eff_normalized=v_eff_normalized,
              dipole_factor=dipole_factor, eta_spatial=eta_spatial)
    return f_ensemble / (dipole_factor * eta_spatial * PURCELL_PREFACTOR / v_eff_normalized)


def emitter_linewidth(q_em: float, lambda0: float) -> float:
    """Homogeneous linewidth ``lambda0 / q_em`` (units of ``lambda0``)."""
    _positive(q_em=q_em, lambda0=lambda0)
    return lambda0 / q_em


def effective_q(q_cav: float, q_em: float, convention: str = EMITTER_LIMITED) -> float:
    """Q entering the Purcell factor.

    ``emitter-limited`` uses ``q_em`` alone (valid when the emitter line is much
    broader than the cavity); ``harmonic`` combines both linewidths.
    """
    _positive(q_cav=q_cav, q_em=q_em)
    if convention == EMITTER_LIMITED:
        return q_em
    if convention == HARMONIC:
        return 1.0 / (1.0 / q_cav + 1.0 / q_em)
    raise PurcellError(f"unknown convention {convention!r}; use {EMITTER_LIMITED!r} or {HARMONIC!r}")


@dataclass
class PurcellReport:
    f_p: float
    f_ensemble: float
    q_em: float
    q_cav: float
    q_used: float
    v_eff_normalized: float
    dipole_factor: float
    eta_spatial: float
    lambda0: float
    delta_lambda_em: float
    half_f_p: float
    q_per_enhancement: float
    convention: str = EMITTER_LIMITED

    def to_dict(self) -> dict:
        return asdict(self)


def purcell_report(q_em: float, v_eff_normalized: float, q_cav: float = 44000.0,
                   lambda0: float = 1538.0, dipole_factor: float = DEFAULT_DIPOLE_FACTOR,
                   eta_spatial: float = DEFAULT_ETA_SPATIAL,
                   convention: str = EMITTER_LIMITED) -> PurcellReport:
    """Assemble the forward chain; ``half_f_p`` is ``F_p / 2`` reported alongside ``F_p``."""
    q_used = effective_q(q_cav, q_em, convention)
    f_p = purcell_max(q_used, v_eff_normalized)
    return PurcellReport(
        f_p=f_p,
        f_ensemble=ensemble_enhancement(f_p, dipole_factor, eta_spatial),
        q_em=q_em,
        q_cav=q_cav,
        q_used=q_used,
        v_eff_normalized=v_eff_normalized,
        dipole_factor=dipole_factor,
        eta_spatial=eta_spatial,
        lambda0=lambda0,
        delta_lambda_em=emitter_linewidth(q_em, lambda0),
        half_f_p=0.5 * f_p,
        q_per_enhancement=q_per_enhancement(v_eff_normalized, dipole_factor, eta_spatial),
        convention=convention,
    )
