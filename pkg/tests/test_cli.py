import json
import os

import numpy as np
import pytest
import yaml

from phc_purcell import fileio
from phc_purcell.cli import main
from phc_purcell.spectra import Interferogram, LLCurve, Spectrum, interferogram_model, lorentzian
from phc_purcell.acceptance import synthetic_ll

SMALL = {"design": {"n_rows": 3, "n_mirror_periods": 2},
         "simulation": {"resolution": 8, "duration": 150, "margin_periods": 0.5},
         "analysis": {"narrowband_duration": 100}}


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out, err = capsys.readouterr()
    return code, out, err


def test_no_subcommand_prints_usage(capsys):
    code, _, err = run(capsys)
    assert code == 1 and "usage" in err


def test_unknown_flag_is_usage_error(capsys):
    code, _, err = run(capsys, "purcell", "--q-em", "abc")
    assert code == 1 and err.count("\n") == 1


def test_purcell_example(capsys, tmp_path):
    code, out, _ = run(capsys, "purcell", "--q-em", 500, "--v-eff", 1.2, "--dipole", 0.5, "--spatial", 0.17,
                       "--out", tmp_path)
    assert code == 0
    rep = json.loads(out)
    assert round(rep["f_ensemble"], 2) == 2.69
    assert json.loads((tmp_path / "purcell.json").read_text()) == rep
    resolved = yaml.safe_load((tmp_path / "config.resolved.yaml").read_text())
    assert resolved["purcell"]["q_em"] == 500.0 and resolved["seed"] == 0


def test_contract_error_exit_one(capsys):
    code, _, err = run(capsys, "purcell", "--q-em", -5)
    assert code == 1 and err.startswith("error:") and err.count("\n") == 1
    code, _, _ = run(capsys, "fit-decay", "/nonexistent/histogram.csv")
    assert code == 1


def test_bad_config_exit_one(capsys, tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("purcell: {q_emm: 3}\n")
    code, _, err = run(capsys, "purcell", "--config", p)
    assert code == 1 and "q_emm" in err


def test_numerical_failure_exit_two(capsys, tmp_path):
    counts = np.zeros(100, dtype=int)
    counts[-1] = 100
    path = tmp_path / "h.csv"
    edges = np.arange(100) * 0.01
    path.write_text("bin_start_ns,counts\n" + "".join(f"{e:.2f},{c}\n" for e, c in zip(edges, counts)))
    code, _, err = run(capsys, "fit-decay", path)
    assert code == 2 and "FitError" in err


def test_output_dir_from_environment(capsys, tmp_path, monkeypatch):
    monkeypatch.setenv("PHC_PURCELL_OUT", str(tmp_path / "envout"))
    assert run(capsys, "purcell")[0] == 0
    assert (tmp_path / "envout" / "purcell.json").exists()


def test_decay_round_trip_and_determinism(capsys, tmp_path):
    for k in (1, 2):
        out = tmp_path / f"run{k}"
        code, _, _ = run(capsys, "simulate-decay", "--tau-ns", 0.20, 2.14, "--amplitudes", 3, 1, "--sigma-ps", 49.5,
                         "--photons", 1_000_000, "--seed", 5, "--out", out)
        assert code == 0
        code, text, _ = run(capsys, "fit-decay", "--components", 2, "--sigma-ps", 49.5, out / "histogram.csv",
                            "--out", out)
        assert code == 0
    a = (tmp_path / "run1" / "decay_fit.json").read_bytes()
    assert a == (tmp_path / "run2" / "decay_fit.json").read_bytes()
    assert (tmp_path / "run1" / "histogram.csv").read_bytes() == (tmp_path / "run2" / "histogram.csv").read_bytes()
    fit = json.loads(text)
    (_, tf), (_, tl) = fit["params"]["components"]
    assert abs(tf / 0.20 - 1) < 0.05 and abs(tl / 2.14 - 1) < 0.03
    assert fit["converged"] is True
    assert (tmp_path / "run1" / "decay_fit.svg").read_text().startswith("<svg")


def test_different_seed_changes_histogram(capsys, tmp_path):
    for s in (1, 2):
        run(capsys, "simulate-decay", "--photons", 1000, "--seed", s, "-o", tmp_path / f"h{s}.csv", "--out", tmp_path)
    assert (tmp_path / "h1.csv").read_bytes() != (tmp_path / "h2.csv").read_bytes()


def test_fit_spectrum_and_interferogram(capsys, tmp_path):
    x = np.linspace(1537, 1539, 201)
    fileio.write_spectrum(tmp_path / "s.csv", Spectrum(x, lorentzian(x, 1538.0, 0.4, 10.0, 0.1)))
    code, out, err = run(capsys, "fit-spectrum", tmp_path / "s.csv", "--out", tmp_path)
    assert code == 0 and err == ""
    assert json.loads(out)["fwhm"] == pytest.approx(0.4, rel=1e-8)
    fileio.write_spectrum(tmp_path / "n.csv", Spectrum(x, lorentzian(x, 1538.0, 0.1, 10.0)))
    code, _, err = run(capsys, "fit-spectrum", tmp_path / "n.csv", "--out", tmp_path)
    assert code == 0 and "warning" in err

    d = np.linspace(0, 80, 50)
    fileio.write_interferogram(tmp_path / "i.csv", Interferogram(d, interferogram_model(d, 1538, 0.0349)))
    code, out, _ = run(capsys, "fit-interferogram", tmp_path / "i.csv", "--lambda0-nm", 1538, "--out", tmp_path)
    assert code == 0 and abs(json.loads(out)["q"] / 44000 - 1) < 0.005


def test_threshold_command(capsys, tmp_path):
    fileio.write_ll_curve(tmp_path / "ll.csv", synthetic_ll())
    code, out, _ = run(capsys, "threshold", tmp_path / "ll.csv", "--out", tmp_path)
    res = json.loads(out)
    assert code == 0 and abs(res["threshold_power"] - 385) <= 15 and abs(res["linewidth_kink"] - 385) <= 15
    assert (tmp_path / "ll_curve.svg").exists()


def test_design_command(capsys, tmp_path):
    code, out, _ = run(capsys, "design", "--resolution", 8, "--out", tmp_path)
    assert code == 0
    summary = json.loads(out)
    assert summary["n_holes"] == 330 and summary["resolution"] == 8.0
    grid = fileio.load_grid(tmp_path / "eps")
    assert (grid.nx, grid.ny) == (summary["nx"], summary["ny"])
    assert (tmp_path / "holes.csv").read_text().startswith("x_nm,y_nm,radius_nm\n")


def test_simulate_resonances_and_mode_metrics(capsys, tmp_path):
    cfg = tmp_path / "small.yaml"
    cfg.write_text(yaml.safe_dump(SMALL))
    broad = tmp_path / "broad"
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--out", broad)
    assert code == 0
    f0 = json.loads(out)["resonance"]["frequency"]
    assert 0.22 < f0 < 0.32

    code, out, _ = run(capsys, "resonances", broad / "timeseries.csv", "--skip", 0, "--out", tmp_path / "res")
    assert code == 0 and len(json.loads(out)) >= 1

    narrow = tmp_path / "narrow"
    code, out, _ = run(capsys, "simulate", "--config", cfg, "--narrowband", f0, "--out", narrow)
    assert code == 0
    metrics = json.loads(out)["mode_metrics"]
    code, out, _ = run(capsys, "mode-metrics", "--grid", narrow / "eps", "--field", narrow / "mode",
                       "--lambda0-nm", metrics["lambda0"], "--out", tmp_path / "mm")
    assert code == 0
    again = json.loads(out)
    assert again["v_eff_physical"] == metrics["v_eff_physical"]
    assert again["eta_spatial"] == metrics["eta_spatial"]
    assert 0 < again["eta_spatial"] <= 1


def test_reproduce_fast_subset(capsys, tmp_path):
    code, out, _ = run(capsys, "reproduce-paper", "--skip-fdtd", "--out", tmp_path)
    assert code == 0
    lines = [ln for ln in out.splitlines() if ln.startswith(("[PASS]", "[FAIL]"))]
    assert len(lines) == 7 and all(ln.startswith("[PASS]") for ln in lines)
    assert json.loads((tmp_path / "acceptance.json").read_text())["criteria"][0]["passed"] is True
