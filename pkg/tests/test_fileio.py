import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from phc_purcell import fileio
from phc_purcell.fdtd import TimeSeries
from phc_purcell.geometry import CavityDesign, build_lattice, rasterize
from phc_purcell.modal import ModeField
from phc_purcell.spectra import Interferogram, LLCurve, Spectrum
from phc_purcell.trpl import DecayHistogram

finite = st.floats(allow_nan=False, allow_infinity=False)


@given(arrays(np.float64, st.tuples(st.integers(1, 6), st.integers(1, 6)), elements=finite))
def test_pgr_round_trip(tmp_path_factory, a):
    path = tmp_path_factory.mktemp("pgr") / "a.pgr"
    fileio.write_array(path, a)
    b = fileio.read_array(path)
    assert np.array_equal(a, b) and b.dtype == np.float64


def test_pgr_layout(tmp_path):
    path = tmp_path / "a.pgr"
    fileio.write_array(path, np.arange(6.0).reshape(2, 3))
    raw = path.read_bytes()
    assert raw[:4] == b"PGR1"
    assert raw[4:8] == (2).to_bytes(4, "little") and raw[8:12] == (3).to_bytes(4, "little")
    assert raw[12:16] == b"\0\0\0\0" and len(raw) == 16 + 48
    assert np.frombuffer(raw[16:], "<f8")[1] == 1.0  # row-major: eps[0, 1]


def test_pgr_rejects_bad_files(tmp_path):
    bad = tmp_path / "bad.pgr"
    bad.write_bytes(b"XXXX" + bytes(12))
    with pytest.raises(fileio.FormatError):
        fileio.read_array(bad)
    bad.write_bytes(b"PGR1" + (2).to_bytes(4, "little") + (2).to_bytes(4, "little") + bytes(4) + bytes(8))
    with pytest.raises(fileio.FormatError):
        fileio.read_array(bad)
    with pytest.raises(fileio.FormatError):
        fileio.write_array(bad, np.zeros(3))


def test_grid_round_trip(tmp_path):
    d = CavityDesign(n_rows=2, n_mirror_periods=1)
    g = rasterize(build_lattice(d), d, 8)
    fileio.save_grid(g, tmp_path / "eps")
    h = fileio.load_grid(tmp_path / "eps")
    assert np.array_equal(g.eps, h.eps)
    assert (h.dx, h.origin, h.n_slab, h.a_nm, h.pml_cells, h.crystal) == \
        (g.dx, g.origin, g.n_slab, g.a_nm, g.pml_cells, g.crystal)


def test_mode_field_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    m = ModeField(rng.normal(size=(4, 5)) + 1j * rng.normal(size=(4, 5)), rng.normal(size=(4, 5)) * 1j, 2.0)
    paths = fileio.save_mode_field(m, tmp_path / "mode")
    assert sorted(p.name for p in paths) == ["mode_ex_im.pgr", "mode_ex_re.pgr", "mode_ey_im.pgr", "mode_ey_re.pgr"]
    back = fileio.load_mode_field(tmp_path / "mode")
    assert np.array_equal(back.ex, m.ex) and np.array_equal(back.ey, m.ey)


def test_timeseries_round_trip(tmp_path):
    ts = TimeSeries(dt=0.03125, samples=np.random.default_rng(1).normal(size=(2, 50)), source_off_step=100,
                    first_step=100)
    fileio.write_timeseries(tmp_path / "t.csv", ts)
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "step,t_normalized,probe_0,probe_1"
    back = fileio.read_timeseries(tmp_path / "t.csv")
    assert np.array_equal(back.samples, ts.samples)
    assert back.dt == pytest.approx(ts.dt, rel=1e-14) and back.first_step == 100


def test_histogram_round_trip(tmp_path):
    h = DecayHistogram(0.01, np.arange(1250) % 7, -1.0)
    fileio.write_histogram(tmp_path / "h.csv", h)
    assert (tmp_path / "h.csv").read_text().startswith("bin_start_ns,counts\n")
    back = fileio.read_histogram(tmp_path / "h.csv")
    assert np.array_equal(back.counts, h.counts)
    assert back.bin_width == pytest.approx(0.01, rel=1e-12) and back.t_start == -1.0


def test_csv_formats_round_trip(tmp_path):
    x = np.linspace(1537, 1539, 20)
    fileio.write_spectrum(tmp_path / "s.csv", Spectrum(x, x - 1530))
    assert np.array_equal(fileio.read_spectrum(tmp_path / "s.csv").wavelength, x)
    fileio.write_interferogram(tmp_path / "i.csv", Interferogram(x - 1537, np.ones(20)))
    assert np.array_equal(fileio.read_interferogram(tmp_path / "i.csv").delay, x - 1537)
    ll = LLCurve(x, x * 2, x / 1e4)
    fileio.write_ll_curve(tmp_path / "l.csv", ll)
    assert (tmp_path / "l.csv").read_text().startswith("power_uW,intensity,linewidth_nm\n")
    assert np.array_equal(fileio.read_ll_curve(tmp_path / "l.csv").linewidth, ll.linewidth)
    fileio.write_ll_curve(tmp_path / "l2.csv", LLCurve(x, x))
    assert fileio.read_ll_curve(tmp_path / "l2.csv").linewidth is None


def test_csv_rejects_wrong_header_and_junk(tmp_path):
    p = tmp_path / "h.csv"
    p.write_text("start,counts\n0,1\n0.01,2\n")
    with pytest.raises(fileio.FormatError):
        fileio.read_histogram(p)
    p.write_text("bin_start_ns,counts\n0,1\n0.01,abc\n")
    with pytest.raises(fileio.FormatError):
        fileio.read_histogram(p)
    p.write_text("bin_start_ns,counts\n0,1\n0.01,2\n0.5,3\n")
    with pytest.raises(fileio.FormatError):
        fileio.read_histogram(p)


def test_json_precision_and_determinism():
    values = {"x": 0.1, "y": [1 / 3, 2.0, float("inf")], "n": 3, "s": "a", "b": True}
    text = fileio.dumps(values)
    assert fileio.dumps(values) == text
    back = json.loads(text)
    assert back["x"] == 0.1 and back["y"][0] == 1 / 3 and back["y"][1] == 2.0 and back["y"][2] is None
    assert isinstance(back["y"][1], float)
    assert "0.10000000000000001" in text


@given(finite)
def test_json_floats_round_trip(x):
    assert json.loads(fileio.dumps([x]))[0] == x
