"""Command-line entry point.

Subcommands:
  design    -- write the device noise-budget report
  simulate  -- run the closed-loop simulation, estimate the spectrum, fit
  analyze   -- fit an existing spectrum CSV
  sweep     -- run a power/gain/temperature sweep into a result directory

All outputs are CSV/text files that embed the config hash and seed;
re-running with the same config and seed reproduces them byte for byte.

Exit codes: 0 success, 2 config error, 3 simulation instability or
integration failure, 4 calibration/fit failure, 1 unexpected error.
"""

from __future__ import annotations

import argparse
import sys
from pathlib import Path

from .config import ConfigError, RunConfig, load_config
from .experiments import cooling_summary, design_report, run_sweep, save_sweep
from .langevin import SimulationError, effective_feedback, simulate
from .model import effective_temperature
from .spectral import (
    CalibrationError,
    FitError,
    calibrate,
    fit_closed_loop,
    fit_report_text,
    occupancy_from_variance,
    spectrum_from_csv,
    spectrum_to_csv,
    welch_psd,
)

EXIT_OK = 0
EXIT_UNEXPECTED = 1
EXIT_CONFIG = 2
EXIT_SIMULATION = 3
EXIT_ANALYSIS = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fbcool",
        description="feedback-cooling simulator and analysis toolkit",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_common(p: argparse.ArgumentParser) -> None:
        p.add_argument("--config", required=True, help="JSON run configuration")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int, default=None, help="override config seed")

    p_design = sub.add_parser("design", help="write the device noise-budget report")
    add_common(p_design)
    p_design.set_defaults(func=cmd_design)

    p_sim = sub.add_parser("simulate", help="simulate, estimate PSD, and fit")
    add_common(p_sim)
    p_sim.set_defaults(func=cmd_simulate)

    p_ana = sub.add_parser("analyze", help="fit an existing spectrum CSV")
    add_common(p_ana)
    p_ana.add_argument("--spectrum", required=True, help="spectrum CSV to fit")
    p_ana.set_defaults(func=cmd_analyze)

    p_sweep = sub.add_parser("sweep", help="run the sweep described by the config")
    add_common(p_sweep)
    p_sweep.add_argument(
        "--parallelism", type=int, default=1, help="concurrent sweep points"
    )
    p_sweep.set_defaults(func=cmd_sweep)
    return parser


def _load(args) -> RunConfig:
    cfg = load_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    return cfg


def _outdir(args) -> Path:
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    return out


def cmd_design(args) -> int:
    cfg = _load(args)
    osc = cfg.oscillator()
    geometry = cfg.geometry() if cfg.has_section("geometry") else None
    meas = cfg.measurement() if cfg.has_section("measurement") else None
    report = design_report(osc, geometry=geometry, meas=meas)
    text = f"config_hash: {cfg.config_hash()}\n" + report.to_text()
    out = _outdir(args) / "design_report.txt"
    out.write_text(text)
    sys.stdout.write(text)
    print(f"wrote {out}")
    return EXIT_OK


def _resolved_phase(cfg: RunConfig, osc, filt) -> float:
    phase = cfg.analysis_options().phase
    if phase == "auto":
        if filt is not None and filt.gain > 0:
            return effective_feedback(osc, filt, cfg.sample_rate()).phase
        return 3.141592653589793 / 2.0
    return float(phase)


def cmd_simulate(args) -> int:
    cfg = _load(args)
    osc = cfg.oscillator()
    meas = cfg.measurement()
    filt = cfg.feedback_filter()
    sim_cfg = cfg.simulation_config(args.seed)
    opts = cfg.analysis_options()
    out = _outdir(args)
    chash = cfg.config_hash()

    ts = simulate(osc, meas, filt, sim_cfg)
    ts.meta["config_hash"] = chash
    ts.meta["config"] = cfg.canonical_dict()
    ts.save_csv(out / "timeseries.csv")

    seg_duration = opts.segment_duration or ts.duration / 8.0
    seg = max(int(round(seg_duration * sim_cfg.sample_rate)), 32)
    spectrum = welch_psd(
        ts.y, sim_cfg.sample_rate, seg, window=opts.window, overlap=opts.overlap
    )
    spectrum_to_csv(
        spectrum,
        out / "spectrum.csv",
        extra_header={"config_hash": chash, "seed": sim_cfg.seed},
    )

    lines = [
        "simulation report",
        f"config_hash: {chash}",
        f"seed: {sim_cfg.seed}",
        f"n_samples: {ts.n_samples}",
        f"duration_s: {ts.duration:.6g}",
        f"loop_gain: {ts.meta['loop_gain']:.6g}",
        f"loop_phase_rad: {ts.meta['loop_phase']:.6g}",
    ]
    occ = occupancy_from_variance(ts.x, osc)
    lines.append(f"occupancy_from_x_variance: {occ.occupancy:.6g}")
    lines.append(
        f"effective_temperature_K: {effective_temperature(occ.occupancy, osc):.6g}"
    )
    if opts.calibrate and sim_cfg.calibration_tone is not None:
        cal = calibrate(spectrum, sim_cfg.calibration_tone.frequency, osc)
        lines += [
            f"calibration_meters_per_unit: {cal.meters_per_unit:.6g}",
            f"calibration_tone_amplitude_m: {cal.tone_amplitude:.6g}",
            f"calibration_averaging_warning: {str(cal.averaging_warning).lower()}",
        ]
    report_text = "\n".join(lines) + "\n"
    if opts.fit:
        phase = _resolved_phase(cfg, osc, filt)
        band = None
        if opts.fit_band is not None:
            band = (osc.frequency - opts.fit_band, osc.frequency + opts.fit_band)
        fit = fit_closed_loop(spectrum, osc, meas, phase, band=band)
        report_text += fit_report_text(fit, osc, extra={"config_hash": chash})
    (out / "report.txt").write_text(report_text)
    print(f"wrote {out / 'timeseries.csv'}")
    print(f"wrote {out / 'spectrum.csv'}")
    print(f"wrote {out / 'report.txt'}")
    return EXIT_OK


def cmd_analyze(args) -> int:
    cfg = _load(args)
    osc = cfg.oscillator()
    meas = cfg.measurement()
    opts = cfg.analysis_options()
    filt = cfg.feedback_filter() if cfg.has_section("feedback_filter") else None
    spectrum = spectrum_from_csv(args.spectrum)
    phase = _resolved_phase(cfg, osc, filt)
    band = None
    if opts.fit_band is not None:
        band = (osc.frequency - opts.fit_band, osc.frequency + opts.fit_band)
    fit = fit_closed_loop(spectrum, osc, meas, phase, band=band)
    out = _outdir(args) / "fit_report.txt"
    out.write_text(
        fit_report_text(
            fit, osc, extra={"config_hash": cfg.config_hash(), "source": args.spectrum}
        )
    )
    sys.stdout.write(out.read_text())
    print(f"wrote {out}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    cfg = _load(args)
    spec = cfg.sweep_spec(args.seed)
    result = run_sweep(spec, parallelism=args.parallelism)
    extra = {"config_hash": cfg.config_hash(), "config": cfg.canonical_dict()}
    if spec.variable == "gain":
        extra["cooling_summary"] = cooling_summary(result)
    outdir = save_sweep(result, _outdir(args), extra_manifest=extra)
    failed = [rec for rec in result.records if not rec.ok]
    print(f"wrote {outdir / 'manifest.json'}")
    print(f"wrote {outdir / 'summary.csv'}")
    if failed:
        print(f"{len(failed)} of {len(result.records)} points failed", file=sys.stderr)
    return EXIT_OK


def main(argv=None) -> int:
    parser = _build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except SimulationError as exc:
        print(f"simulation error: {exc}", file=sys.stderr)
        return EXIT_SIMULATION
    except (FitError, CalibrationError) as exc:
        print(f"analysis error: {exc}", file=sys.stderr)
        return EXIT_ANALYSIS


if __name__ == "__main__":
    sys.exit(main())
