"""Double-heterostructure photonic-crystal cavity toolkit.

Geometry and 2D FDTD for the cavity, harmonic-inversion resonance analysis,
mode volume and Purcell chain, IRF-convolved decay fitting, and the spectral
analyses of line shapes and lasing thresholds.
"""
from .geometry import CavityDesign, GeometryError, HoleList, PermittivityGrid, build_lattice, rasterize
from .modal import ModeField, ModeMetrics, Resonance, find_resonances, mode_volume, q_from_linewidth, spatial_factor
from .purcell import PurcellReport, ensemble_enhancement, invert_for_q_em, purcell_max, purcell_report
from .trpl import DecayFit, DecayHistogram, DecayModelParams, decay_model, fit_decay, lifetime_ratio, simulate_histogram

__version__ = "0.1.0"

__all__ = [
    "CavityDesign", "GeometryError", "HoleList", "PermittivityGrid", "build_lattice", "rasterize",
    "ModeField", "ModeMetrics", "Resonance", "find_resonances", "mode_volume", "q_from_linewidth", "spatial_factor",
    "PurcellReport", "ensemble_enhancement", "invert_for_q_em", "purcell_max", "purcell_report",
    "DecayFit", "DecayHistogram", "DecayModelParams", "decay_model", "fit_decay", "lifetime_ratio",
    "simulate_histogram",
]
