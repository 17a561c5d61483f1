"""Readers and writers for the toolkit's file formats.

* ``.pgr`` arrays: 16-byte header (``b"PGR1"``, nx, ny as little-endian uint32,
  4 zero bytes) followed by ``nx * ny`` little-endian float64 in row-major order.
  A permittivity grid adds a ``key = value`` text sidecar.
* CSV tables with fixed headers for time series, histograms and spectra.
* JSON reports with floats written to 17 significant digits, so identical
  inputs give byte-identical files.
"""
from __future__ import annotations

import csv
import json
import math
import struct
from pathlib import Path

import numpy as np

from .fdtd import TimeSeries
from .geometry import HoleList, PermittivityGrid
from .modal import ModeField
from .spectra import Interferogram, LLCurve, Spectrum
from .trpl import DEFAULT_REP_PERIOD_NS, DecayHistogram

MAGIC = b"PGR1"
_HEADER = struct.Struct("<4sII4x")


class FormatError(ValueError):
    pass


# --- binary arrays -------------------------------------------------------------

def write_array(path, array: np.ndarray) -> None:
    a = np.asarray(array, dtype="<f8")
    if a.ndim != 2:
        raise FormatError("only 2D arrays can be written")
    with open(path, "wb") as fh:
        fh.write(_HEADER.pack(MAGIC, a.shape[0], a.shape[1]))
        fh.write(np.ascontiguousarray(a).tobytes(order="C"))


def read_array(path) -> np.ndarray:
    raw = Path(path).read_bytes()
    if len(raw) < _HEADER.size:
        raise FormatError(f"{path}: file too short for a PGR1 header")
    magic, nx, ny = _HEADER.unpack_from(raw)
    if magic != MAGIC:
        raise FormatError(f"{path}: bad magic {magic!r}")
    body = raw[_HEADER.size:]
    if len(body) != 8 * nx * ny:
        raise FormatError(f"{path}: expected {nx * ny} values, found {len(body) // 8}")
    return np.frombuffer(body, dtype="<f8").reshape(nx, ny).copy()


def _read_sidecar(path) -> dict:
    out = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        key, _, value = line.partition("=")
        out[key.strip()] = value.strip()
    return out


def save_grid(grid: PermittivityGrid, stem) -> tuple[Path, Path]:
    """Write ``stem.pgr`` and the ``stem.txt`` sidecar."""
    stem = Path(stem)
    write_array(stem.with_suffix(".pgr"), grid.eps)
    lines = [
        f"dx = {grid.dx!r}",
        f"origin = {grid.origin[0]!r} {grid.origin[1]!r}",
        f"n_slab = {grid.n_slab!r}",
        f"a_nm = {grid.a_nm!r}",
        f"pml_cells = {grid.pml_cells}",
    ]
    if grid.crystal is not None:
        lines.append("crystal = " + " ".join(str(int(v)) for v in grid.crystal))
    side = stem.with_suffix(".txt")
    side.write_text("\n".join(lines) + "\n", encoding="utf-8")
    return stem.with_suffix(".pgr"), side


def load_grid(stem) -> PermittivityGrid:
    stem = Path(stem)
    eps = read_array(stem.with_suffix(".pgr"))
    meta = _read_sidecar(stem.with_suffix(".txt"))
    try:
        ox, oy = (float(v) for v in meta["origin"].split())
        crystal = tuple(int(v) for v in meta["crystal"].split()) if "crystal" in meta else None
        return PermittivityGrid(eps=eps, dx=float(meta["dx"]), origin=(ox, oy),
                                n_slab=float(meta["n_slab"]), a_nm=float(meta["a_nm"]),
                                pml_cells=int(meta.get("pml_cells", 0)), crystal=crystal)
    except (KeyError, ValueError) as exc:
        raise FormatError(f"{stem}.txt: incomplete sidecar ({exc})") from exc


def save_mode_field(mode: ModeField, stem) -> list[Path]:
    """Four arrays: ``stem_ex_re.pgr``, ``stem_ex_im.pgr``, ``stem_ey_re.pgr``, ``stem_ey_im.pgr``."""
    stem = Path(stem)
    paths = []
    for name, arr in (("ex", mode.ex), ("ey", mode.ey)):
        for part, values in (("re", arr.real), ("im", arr.imag)):
            p = stem.parent / f"{stem.name}_{name}_{part}.pgr"
            write_array(p, values)
            paths.append(p)
    return paths


def load_mode_field(stem, grid: PermittivityGrid | None = None, region=None,
                    frequency: float | None = None) -> ModeField:
    stem = Path(stem)
    parts = {}
    for name in ("ex", "ey"):
        re = read_array(stem.parent / f"{stem.name}_{name}_re.pgr")
        im = read_array(stem.parent / f"{stem.name}_{name}_im.pgr")
        parts[name] = re + 1j * im
    dx = grid.dx if grid is not None else 1.0
    origin = grid.origin if grid is not None else (0.0, 0.0)
    return ModeField(parts["ex"], parts["ey"], dx, origin, region, frequency)


# --- CSV ---------------------------------------------------------------------------

def _fmt(v: float) -> str:
    return format(float(v), ".17g")


def _read_table(path, required: list[str], optional: tuple = (), extra: bool = False) -> dict:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        try:
            header = [h.strip() for h in next(reader)]
        except StopIteration:
            raise FormatError(f"{path}: empty file") from None
        if header[:len(required)] != required:
            raise FormatError(f"{path}: expected header starting {','.join(required)}, got {','.join(header)}")
        allowed = set(required) | set(optional)
        if not extra and not set(header) <= allowed:
            raise FormatError(f"{path}: unexpected columns {sorted(set(header) - allowed)}")
        rows = [r for r in reader if r and any(c.strip() for c in r)]
    try:
        data = np.array([[float(c) for c in r] for r in rows], dtype=float).reshape(len(rows), len(header))
    except ValueError as exc:
        raise FormatError(f"{path}: non-numeric or ragged row ({exc})") from exc
    return {h: data[:, k] for k, h in enumerate(header)}


def _write_table(path, header: list[str], columns: list) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in zip(*columns):
            w.writerow([v if isinstance(v, str) else _fmt(v) if isinstance(v, float) else v for v in row])


def write_timeseries(path, series: TimeSeries) -> None:
    header = ["step", "t_normalized"] + [f"probe_{k}" for k in range(series.samples.shape[0])]
    cols = [[int(s) for s in series.steps], [float(t) for t in series.times]]
    cols += [[float(v) for v in row] for row in series.samples]
    _write_table(path, header, cols)


def read_timeseries(path) -> TimeSeries:
    """Read a probe CSV; the record is taken to start after the source turned off."""
    t = _read_table(path, ["step", "t_normalized"], extra=True)
    steps = t["step"].astype(int)
    if len(steps) < 2:
        raise FormatError(f"{path}: need at least two samples")
    dt = float((t["t_normalized"][-1] - t["t_normalized"][0]) / (steps[-1] - steps[0]))
    probes = [k for k in t if k.startswith("probe_")]
    if not probes:
        raise FormatError(f"{path}: no probe columns")
    samples = np.vstack([t[k] for k in probes])
    return TimeSeries(dt=dt, samples=samples, source_off_step=int(steps[0]), first_step=int(steps[0]))


def write_histogram(path, hist: DecayHistogram) -> None:
    starts = hist.edges[:-1]
    _write_table(path, ["bin_start_ns", "counts"],
                 [[float(v) for v in starts], [int(c) for c in hist.counts]])


def read_histogram(path, rep_period: float = DEFAULT_REP_PERIOD_NS) -> DecayHistogram:
    t = _read_table(path, ["bin_start_ns", "counts"])
    start = t["bin_start_ns"]
    if len(start) < 2:
        raise FormatError(f"{path}: need at least two bins")
    widths = np.diff(start)
    if np.any(widths <= 0) or np.ptp(widths) > 1e-6 * widths.mean():
        raise FormatError(f"{path}: bins must be uniform and increasing")
    return DecayHistogram(bin_width=float(widths.mean()), counts=t["counts"],
                          t_start=float(start[0]), rep_period=rep_period)


def write_spectrum(path, spec: Spectrum) -> None:
    _write_table(path, ["wavelength_nm", "intensity"],
                 [[float(v) for v in spec.wavelength], [float(v) for v in spec.intensity]])


def read_spectrum(path, resolution: float = 0.15) -> Spectrum:
    t = _read_table(path, ["wavelength_nm", "intensity"])
    return Spectrum(t["wavelength_nm"], t["intensity"], resolution)


def write_interferogram(path, ifg: Interferogram) -> None:
    _write_table(path, ["delay_mm", "contrast"],
                 [[float(v) for v in ifg.delay], [float(v) for v in ifg.contrast]])


def read_interferogram(path) -> Interferogram:
    t = _read_table(path, ["delay_mm", "contrast"])
    return Interferogram(t["delay_mm"], t["contrast"])


def write_ll_curve(path, ll: LLCurve) -> None:
    header = ["power_uW", "intensity"]
    cols = [[float(v) for v in ll.pump_power], [float(v) for v in ll.output_intensity]]
    if ll.linewidth is not None:
        header.append("linewidth_nm")
        cols.append([float(v) for v in ll.linewidth])
    _write_table(path, header, cols)


def read_ll_curve(path) -> LLCurve:
    t = _read_table(path, ["power_uW", "intensity"], optional=("linewidth_nm",))
    return LLCurve(t["power_uW"], t["intensity"], t.get("linewidth_nm"))


def write_holes(path, holes: HoleList) -> None:
    h = holes.holes
    _write_table(path, ["x_nm", "y_nm", "radius_nm"], [[float(v) for v in h[:, k]] for k in range(3)])


# --- JSON ----------------------------------------------------------------------------

def _plain(obj):
    if hasattr(obj, "to_dict"):
        return _plain(obj.to_dict())
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _plain(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    raise TypeError(f"cannot serialise {type(obj).__name__}")


def _encode(obj, indent: int, level: int) -> str:
    pad = " " * (indent * (level + 1))
    end = " " * (indent * level)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_encode_str(k)}: {_encode(v, indent, level + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, indent, level) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + _encode(v, indent, level + 1) for v in obj) + "\n" + end + "]"
    if obj is True:
        return "true"
    if obj is False:
        return "false"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        if not math.isfinite(obj):
            return "null"
        text = format(obj, ".17g")
        # keep floats recognisable as floats when read back
        return text if any(ch in text for ch in ".en") else text + ".0"
    return _encode_str(obj)


def _encode_str(s: str) -> str:
    return json.dumps(s, ensure_ascii=False)


def dumps(obj, indent: int = 2) -> str:
    """JSON text with every float at 17 significant digits; non-finite floats become null."""
    return _encode(_plain(obj), indent, 0) + "\n"


def write_json(path, obj) -> None:
    Path(path).write_text(dumps(obj), encoding="utf-8")
