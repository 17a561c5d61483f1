"""Command-line front end: design -> simulate -> analyse -> report.

Exit codes: 0 success, 1 input or contract error, 2 numerical failure. Every
command writes its outputs and ``config.resolved.yaml`` to the output
directory (``--out``, else ``$PHC_PURCELL_OUT``, else ``./phc_output``).
"""
from __future__ import annotations

import argparse
import logging
import os
import sys
import warnings
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, acceptance
from . import config as cfgmod
from . import fileio
from .fdtd import InstabilityError, emitter_plane
from .geometry import air_fill_factor, build_lattice, rasterize
from .modal import NoResonanceError, mode_metrics, q_from_linewidth
from .pipeline import analyse_ringdown, characterize_mode, locate_resonance
from .purcell import EMITTER_LIMITED, HARMONIC, invert_for_q_em, purcell_report
from .spectra import coherence_length_mm, fit_interferogram, fit_lorentzian, lorentzian, threshold_analysis
from .svgplot import Series, plot
from .trpl import DecayModelParams, FitError, binned_model, fit_decay, simulate_histogram

OUT_ENV = "PHC_PURCELL_OUT"
NUMERICAL_ERRORS = (InstabilityError, FitError, NoResonanceError, np.linalg.LinAlgError, RuntimeError)
CONTRACT_ERRORS = (ValueError, OSError, KeyError)

log = logging.getLogger("phc_purcell")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# --- helpers -----------------------------------------------------------------------

def _load_config(args) -> cfgmod.RunConfig:
    conf = cfgmod.load(args.config) if getattr(args, "config", None) else cfgmod.RunConfig()
    if getattr(args, "seed", None) is not None:
        conf.seed = args.seed
    sim = conf.simulation
    if getattr(args, "resolution", None) is not None:
        sim = replace(sim, resolution=args.resolution)
    if getattr(args, "threads", None) is not None:
        sim = replace(sim, threads=args.threads)
    conf.simulation = sim
    return conf


def _out_dir(args) -> Path:
    path = Path(args.out or os.environ.get(OUT_ENV) or "phc_output")
    path.mkdir(parents=True, exist_ok=True)
    return path


def _report(args, conf, name: str, payload) -> None:
    out = _out_dir(args)
    fileio.write_json(out / name, payload)
    cfgmod.write_resolved(conf, out)
    sys.stdout.write(fileio.dumps(payload))


def _grid(conf):
    sim = conf.simulation
    holes = build_lattice(conf.design)
    grid = rasterize(holes, conf.design, sim.resolution, margin_periods=sim.margin_periods,
                     pml_cells=sim.pml_cells)
    return holes, grid


# --- subcommands -----------------------------------------------------------------

def cmd_design(args) -> int:
    conf = _load_config(args)
    holes, grid = _grid(conf)
    out = _out_dir(args)
    fileio.write_holes(out / "holes.csv", holes)
    fileio.save_grid(grid, out / "eps")
    summary = {
        "n_holes": len(holes),
        "bounding_box": list(holes.bounding_box),
        "nx": grid.nx,
        "ny": grid.ny,
        "dx": grid.dx,
        "resolution": grid.resolution,
        "air_fill_factor": air_fill_factor(grid, len(holes), conf.design),
    }
    _report(args, conf, "design.json", summary)
    return 0


def cmd_simulate(args) -> int:
    conf = _load_config(args)
    sim, an = conf.simulation, conf.analysis
    _, grid = _grid(conf)
    out = _out_dir(args)
    fileio.save_grid(grid, out / "eps")
    common = dict(band=tuple(an.band), courant=sim.courant, threads=sim.threads, skip=an.skip,
                  max_modes=an.max_modes)
    if args.narrowband is None:
        run = locate_resonance(grid, sim.duration, center=sim.center_frequency, bandwidth=sim.bandwidth, **common)
        payload = {"resonance": run.resonance, "resonances": run.all_resonances}
    else:
        run = characterize_mode(grid, args.narrowband, conf.design.h_eff, an.narrowband_duration,
                                an.narrowband_bandwidth, **common)
        fileio.save_mode_field(run.series.mode_field, out / "mode")
        payload = {"resonance": run.resonance, "resonances": run.all_resonances, "mode_metrics": run.metrics}
    fileio.write_timeseries(out / "timeseries.csv", run.series)
    _report(args, conf, "resonances.json", payload)
    return 0


def cmd_resonances(args) -> int:
    conf = _load_config(args)
    series = fileio.read_timeseries(args.timeseries)
    band = tuple(args.band) if args.band else tuple(conf.analysis.band)
    found = analyse_ringdown(series, band, args.max_modes or conf.analysis.max_modes,
                             conf.analysis.skip if args.skip is None else args.skip, a_nm=args.a_nm)
    _report(args, conf, "resonances.json", found)
    return 0


def cmd_mode_metrics(args) -> int:
    conf = _load_config(args)
    grid = fileio.load_grid(args.grid)
    mode = fileio.load_mode_field(args.field, grid, region=emitter_plane(grid))
    h_eff = args.h_eff_nm if args.h_eff_nm is not None else conf.design.h_eff
    metrics = mode_metrics(mode, grid, h_eff, args.lambda0_nm)
    _report(args, conf, "mode_metrics.json", metrics)
    return 0


def cmd_purcell(args) -> int:
    conf = _load_config(args)
    p = conf.purcell
    rep = purcell_report(
        q_em=p.q_em if args.q_em is None else args.q_em,
        v_eff_normalized=p.v_eff if args.v_eff is None else args.v_eff,
        q_cav=p.q_cav if args.q_cav is None else args.q_cav,
        lambda0=p.lambda0_nm if args.lambda0_nm is None else args.lambda0_nm,
        dipole_factor=p.dipole if args.dipole is None else args.dipole,
        eta_spatial=p.spatial if args.spatial is None else args.spatial,
        convention=args.convention or p.convention,
    )
    _report(args, conf, "purcell.json", rep)
    return 0


def cmd_simulate_decay(args) -> int:
    conf = _load_config(args)
    d = conf.decay
    comps = d.components
    if args.tau_ns:
        amps = args.amplitudes or [1.0] * len(args.tau_ns)
        if len(amps) != len(args.tau_ns):
            raise ValueError("--amplitudes must match --tau-ns in length")
        comps = list(zip(amps, args.tau_ns))
    sigma_ps = d.sigma_ps if args.sigma_ps is None else args.sigma_ps
    params = DecayModelParams(comps, sigma=sigma_ps / 1000.0, t0=d.t0)
    hist = simulate_histogram(
        params,
        d.n_photons if args.photons is None else args.photons,
        dark_rate=d.dark_rate if args.dark_rate is None else args.dark_rate,
        acquisition_time=d.acquisition_time if args.acquisition_s is None else args.acquisition_s,
        bin_width=d.bin_width_ns,
        rep_period=d.rep_period_ns,
        seed=conf.seed,
    )
    out = _out_dir(args)
    path = Path(args.output) if args.output else out / "histogram.csv"
    fileio.write_histogram(path, hist)
    cfgmod.write_resolved(conf, out)
    sys.stdout.write(f"{path}\n")
    return 0


def cmd_fit_decay(args) -> int:
    conf = _load_config(args)
    hist = fileio.read_histogram(args.histogram, conf.decay.rep_period_ns)
    sigma_ps = conf.decay.sigma_ps if args.sigma_ps is None else args.sigma_ps
    fit = fit_decay(hist, args.components, "free" if args.free_sigma else "fixed", sigma_ps / 1000.0)
    if not fit.converged:
        raise FitError(f"decay fit did not converge in {fit.n_iterations} iterations")
    out = _out_dir(args)
    model = binned_model(hist.edges, fit.params)
    plot(out / "decay_fit.svg", [Series(hist.centers, hist.counts, "counts", markers=True),
                                 Series(hist.centers, model, "fit")],
         "delay (ns)", "counts", logy=True)
    _report(args, conf, "decay_fit.json", fit)
    return 0


def cmd_fit_spectrum(args) -> int:
    conf = _load_config(args)
    spec = fileio.read_spectrum(args.spectrum, args.resolution_nm)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        fit = fit_lorentzian(spec)
    for w in caught:
        print(f"warning: {w.message}", file=sys.stderr)
    payload = fit.to_dict()
    payload["q"] = q_from_linewidth(fit.lambda0, fit.fwhm)
    out = _out_dir(args)
    plot(out / "spectrum_fit.svg", [Series(spec.wavelength, spec.intensity, "data", markers=True),
                                    Series(spec.wavelength, lorentzian(spec.wavelength, fit.lambda0, fit.fwhm,
                                                                       fit.amplitude, fit.offset), "fit")],
         "wavelength (nm)", "intensity")
    _report(args, conf, "spectrum_fit.json", payload)
    return 0


def cmd_fit_interferogram(args) -> int:
    conf = _load_config(args)
    ifg = fileio.read_interferogram(args.interferogram)
    fwhm, err = fit_interferogram(ifg, args.lambda0_nm, relative_noise=args.relative_noise)
    payload = {
        "lambda0": args.lambda0_nm,
        "fwhm": fwhm,
        "fwhm_std_error": err,
        "q": q_from_linewidth(args.lambda0_nm, fwhm),
        "coherence_length_mm": coherence_length_mm(args.lambda0_nm, fwhm),
    }
    _report(args, conf, "interferogram_fit.json", payload)
    return 0


def cmd_threshold(args) -> int:
    conf = _load_config(args)
    ll = fileio.read_ll_curve(args.ll_curve)
    res = threshold_analysis(ll)
    out = _out_dir(args)
    plot(out / "ll_curve.svg", [Series(ll.pump_power, ll.output_intensity, "output", markers=True)],
         "pump power (uW)", "intensity", logx=True, logy=True)
    _report(args, conf, "threshold.json", res)
    return 0


def _comparison_rows(results) -> list:
    by = {r.number: r for r in results}
    rows = []
    if 1 in by:
        rows.append(("ensemble enhancement F (Q_em=500, V=1.2)", "2.7", f"{by[1].values['f_ensemble']:.3f}"))
        rows.append(("F = Q_em / D, D", "186", f"{by[1].values['denominator']:.2f}"))
        rows.append(("Q_em at F = 2.8", "~500", f"{invert_for_q_em(2.8, 1.2):.1f}"))
    if 2 in by:
        rows.append(("Q_cav from 1538/(1538/44000) nm", "44000", f"{by[2].values['q']:.1f}"))
        rows.append(("emitter linewidth at Q_em=500 (nm)", "~3", f"{by[2].values['delta_lambda_em']:.3f}"))
    if 4 in by:
        rows.append(("long lifetime ratio (synthetic round trip)", "2.8",
                     f"{by[4].values['long_ratio']:.3f} +/- {by[4].values['long_ratio_err']:.3f}"))
    if 5 in by:
        rows.append(("1/e delay for 0.035 nm (mm)", "-", f"{by[5].values['coherence_length_mm']:.2f}"))
    if 6 in by:
        rows.append(("threshold pump power (uW, synthetic)", "385", f"{by[6].values['threshold']:.1f}"))
    if 7 in by:
        st = by[7].values["study"]
        rows.append(("cavity Q (2D FDTD, in-plane only)", "44000", f"{st.cavity16.resonance.q:.0f}"))
        rows.append(("cavity wavelength (nm)", "1538", f"{st.cavity16.resonance.wavelength_nm:.1f}"))
        rows.append(("V_eff ((lambda/n)^3, 2D FDTD)", "1.2", f"{st.narrow32.metrics.v_eff_normalized:.3f}"))
        rows.append(("spatial factor (2D FDTD)", "0.17", f"{st.narrow32.metrics.eta_spatial:.3f}"))
    return rows


def cmd_reproduce(args) -> int:
    conf = _load_config(args)
    results = [fn() for fn in acceptance.FAST_CHECKS]
    if not args.skip_fdtd:
        results.append(acceptance.check_fdtd(threads=conf.simulation.threads))
    results.append(acceptance.check_harmonic_inversion())
    rows = _comparison_rows(results)
    w = max(len(r[0]) for r in rows)
    print(f"{'quantity':<{w}}  {'published':>10}  toolkit")
    for name, published, ours in rows:
        print(f"{name:<{w}}  {published:>10}  {ours}")
    print()
    for r in results:
        print(r.line())
    summary = {"criteria": [{"number": r.number, "name": r.name, "passed": r.passed, "detail": r.detail}
                            for r in results]}
    out = _out_dir(args)
    fileio.write_json(out / "acceptance.json", summary)
    cfgmod.write_resolved(conf, out)
    return 0 if all(r.passed for r in results) else 2


# --- parser -----------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML run configuration")
    common.add_argument("--out", help=f"output directory (default ${OUT_ENV} or ./phc_output)")
    common.add_argument("--seed", type=int, help="seed for all stochastic steps")
    common.add_argument("--threads", type=int, help="FDTD worker threads")

    p = _Parser(prog="phc-purcell", description=__doc__.splitlines()[0])
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    s = sub.add_parser("design", parents=[common], help="hole list and permittivity grid")
    s.add_argument("--resolution", type=int, help="cells per mirror period")
    s.set_defaults(func=cmd_design)

    s = sub.add_parser("simulate", parents=[common], help="FDTD ringdown (broadband, or narrowband + mode field)")
    s.add_argument("--resolution", type=int)
    s.add_argument("--narrowband", type=float, metavar="FREQ",
                   help="narrowband run at this a/lambda; also exports the mode field")
    s.set_defaults(func=cmd_simulate)

    s = sub.add_parser("resonances", parents=[common], help="harmonic inversion of a probe CSV")
    s.add_argument("timeseries")
    s.add_argument("--band", type=float, nargs=2, metavar=("LO", "HI"), help="band in a/lambda")
    s.add_argument("--max-modes", type=int)
    s.add_argument("--skip", type=float, help="a/c discarded at the start of the record")
    s.add_argument("--a-nm", type=float, help="period for wavelength conversion")
    s.set_defaults(func=cmd_resonances)

    s = sub.add_parser("mode-metrics", parents=[common], help="V_eff and spatial factor from exported fields")
    s.add_argument("--grid", required=True, help="permittivity stem (STEM.pgr + STEM.txt)")
    s.add_argument("--field", required=True, help="mode-field stem (STEM_ex_re.pgr, ...)")
    s.add_argument("--lambda0-nm", type=float, required=True)
    s.add_argument("--h-eff-nm", type=float)
    s.set_defaults(func=cmd_mode_metrics)

    s = sub.add_parser("purcell", parents=[common], help="Purcell chain report")
    s.add_argument("--q-em", type=float)
    s.add_argument("--v-eff", type=float, help="mode volume in (lambda/n)^3")
    s.add_argument("--dipole", type=float, help="orientation factor")
    s.add_argument("--spatial", type=float, help="in-plane spatial factor")
    s.add_argument("--q-cav", type=float)
    s.add_argument("--lambda0-nm", type=float)
    s.add_argument("--convention", choices=[EMITTER_LIMITED, HARMONIC])
    s.set_defaults(func=cmd_purcell)

    s = sub.add_parser("simulate-decay", parents=[common], help="Monte Carlo decay histogram")
    s.add_argument("--tau-ns", type=float, nargs="+")
    s.add_argument("--amplitudes", type=float, nargs="+")
    s.add_argument("--sigma-ps", type=float)
    s.add_argument("--photons", type=int)
    s.add_argument("--dark-rate", type=float, help="dark counts per second")
    s.add_argument("--acquisition-s", type=float)
    s.add_argument("-o", "--output", help="histogram CSV path")
    s.set_defaults(func=cmd_simulate_decay)

    s = sub.add_parser("fit-decay", parents=[common], help="IRF-convolved decay fit")
    s.add_argument("histogram")
    s.add_argument("--components", type=int, default=2, choices=[1, 2])
    s.add_argument("--sigma-ps", type=float, help="IRF standard deviation")
    s.add_argument("--free-sigma", action="store_true", help="fit sigma, starting from --sigma-ps")
    s.set_defaults(func=cmd_fit_decay)

    s = sub.add_parser("fit-spectrum", parents=[common], help="Lorentzian line fit")
    s.add_argument("spectrum")
    s.add_argument("--resolution-nm", type=float, default=0.15)
    s.set_defaults(func=cmd_fit_spectrum)

    s = sub.add_parser("fit-interferogram", parents=[common], help="linewidth from fringe-envelope decay")
    s.add_argument("interferogram")
    s.add_argument("--lambda0-nm", type=float, required=True)
    s.add_argument("--relative-noise", action="store_true", help="weight for noise proportional to contrast")
    s.set_defaults(func=cmd_fit_interferogram)

    s = sub.add_parser("threshold", parents=[common], help="L-L threshold analysis")
    s.add_argument("ll_curve")
    s.set_defaults(func=cmd_threshold)

    s = sub.add_parser("reproduce-paper", parents=[common], help="acceptance pipeline and comparison table")
    s.add_argument("--skip-fdtd", action="store_true", help="leave out the FDTD criterion")
    s.set_defaults(func=cmd_reproduce)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(str(exc), file=sys.stderr)
        return 1
    if args.command is None:
        parser.print_usage(sys.stderr)
        return 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        return args.func(args)
    except NUMERICAL_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2
    except CONTRACT_ERRORS as exc:
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
