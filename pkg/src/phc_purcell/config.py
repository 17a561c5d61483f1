"""Run configuration: a strict YAML document with one section per stage.

Unknown keys are rejected at every level, and :func:`resolved` gives the full
document with defaults filled in, which every run writes next to its outputs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import yaml

from .geometry import CavityDesign


class ConfigError(ValueError):
    pass


@dataclass
class SimulationSection:
    resolution: int = 16
    courant: float = 0.5
    pml_cells: int = 16
    margin_periods: float = 1.0
    duration: float = 1800.0  # a/c after source turn-off
    center_frequency: float = 0.27
    bandwidth: float = 0.15
    threads: int | None = None


@dataclass
class AnalysisSection:
    band: list = field(default_factory=lambda: [0.22, 0.32])
    max_modes: int = 6
    skip: float = 60.0  # a/c discarded at the start of the ringdown
    narrowband_duration: float = 600.0
    narrowband_bandwidth: float = 0.01


@dataclass
class DecaySection:
    components: list = field(default_factory=lambda: [[3.0, 0.20], [1.0, 2.14]])  # [amplitude, tau_ns]
    sigma_ps: float = 49.5
    t0: float = 0.0
    n_photons: int = 1_000_000
    bin_width_ns: float = 0.01
    rep_period_ns: float = 12.5
    dark_rate: float = 0.0
    acquisition_time: float = 0.0


@dataclass
class PurcellSection:
    q_em: float = 500.0
    v_eff: float = 1.2
    q_cav: float = 44000.0
    lambda0_nm: float = 1538.0
    dipole: float = 0.5
    spatial: float = 0.17
    convention: str = "emitter-limited"


@dataclass
class RunConfig:
    seed: int = 0
    design: CavityDesign = field(default_factory=CavityDesign)
    simulation: SimulationSection = field(default_factory=SimulationSection)
    analysis: AnalysisSection = field(default_factory=AnalysisSection)
    decay: DecaySection = field(default_factory=DecaySection)
    purcell: PurcellSection = field(default_factory=PurcellSection)


_SECTIONS = {
    "design": CavityDesign,
    "simulation": SimulationSection,
    "analysis": AnalysisSection,
    "decay": DecaySection,
    "purcell": PurcellSection,
}


def _coerce(cls, name: str, values) -> object:
    if values is None:
        values = {}
    if not isinstance(values, dict):
        raise ConfigError(f"section {name!r} must be a mapping")
    known = {f.name: f for f in fields(cls)}
    unknown = sorted(set(values) - set(known))
    if unknown:
        raise ConfigError(f"unknown key(s) in {name!r}: {', '.join(map(str, unknown))}")
    kwargs = {}
    for key, value in values.items():
        default = getattr(cls(), key)
        if isinstance(default, bool) or value is None:
            kwargs[key] = value
        elif isinstance(default, int) and not isinstance(value, bool):
            if isinstance(value, float) and not value.is_integer():
                raise ConfigError(f"{name}.{key} must be an integer, got {value}")
            kwargs[key] = int(value)
        elif isinstance(default, float):
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise ConfigError(f"{name}.{key} must be a number, got {value!r}")
            kwargs[key] = float(value)
        else:
            kwargs[key] = value
    try:
        return cls(**kwargs)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"invalid {name!r} section: {exc}") from exc


def from_dict(doc: dict | None) -> RunConfig:
    doc = doc or {}
    if not isinstance(doc, dict):
        raise ConfigError("configuration must be a mapping at top level")
    unknown = sorted(set(doc) - set(_SECTIONS) - {"seed"})
    if unknown:
        raise ConfigError(f"unknown top-level key(s): {', '.join(map(str, unknown))}")
    seed = doc.get("seed", 0)
    if isinstance(seed, bool) or not isinstance(seed, int) or seed < 0:
        raise ConfigError(f"seed must be a non-negative integer, got {seed!r}")
    sections = {name: _coerce(cls, name, doc.get(name)) for name, cls in _SECTIONS.items()}
    return RunConfig(seed=seed, **sections)


def load(path) -> RunConfig:
    try:
        doc = yaml.safe_load(Path(path).read_text(encoding="utf-8"))
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML ({exc})") from exc
    return from_dict(doc)


def resolved(config: RunConfig) -> dict:
    out = {"seed": config.seed}
    for name in _SECTIONS:
        out[name] = asdict(getattr(config, name))
    return out


def dump(config: RunConfig) -> str:
    return yaml.safe_dump(resolved(config), sort_keys=False, default_flow_style=None)


def write_resolved(config: RunConfig, directory) -> Path:
    path = Path(directory) / "config.resolved.yaml"
    path.write_text(dump(config), encoding="utf-8")
    return path
