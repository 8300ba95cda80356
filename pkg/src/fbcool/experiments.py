"""Parameter sweeps and design reports for the feedback-cooling toolkit.

Orchestrates the power sweep (imprecision floor versus optical power),
the gain sweep (cooling curve with fitted, simulated, and analytic
occupancies), a bath-temperature sweep, and the single-device noise-budget
report.  Sweep points run independently with per-point seed splits, so
results are identical whether points execute serially or in parallel, and
a failed point is recorded rather than fatal.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .langevin import (
    FeedbackFilter,
    SimulationConfig,
    SimulationError,
    effective_feedback,
    simulate,
)
from .model import (
    DeviceGeometry,
    Measurement,
    Oscillator,
    absorption_heating,
    gs_imprecision_requirement,
    imprecision_quanta,
    mean_phonon,
    noise_budget,
    optimal_gain,
    q_scaling_estimate,
    shot_noise_imprecision,
    thermal_occupation,
    total_imprecision,
)
from .spectral import (
    CalibrationError,
    FitError,
    Spectrum,
    fit_closed_loop,
    occupancy_from_variance,
    spectrum_to_csv,
    welch_psd,
)

__all__ = [
    "DesignReport",
    "PointRecord",
    "SweepSpec",
    "SweepResult",
    "design_report",
    "power_sweep",
    "gain_sweep",
    "temperature_sweep",
    "run_sweep",
    "save_sweep",
    "crossover_power",
]

_SWEEP_VARIABLES = ("power", "gain", "temperature")


@dataclass(frozen=True)
class SweepSpec:
    """One sweep: which variable, the ladder of values, and the base setup.

    ``sim_config.duration`` caps the per-point run length; with
    ``adaptive_duration`` (default) each point is shortened to what its
    loaded linewidth requires.  ``sim_config.seed`` is the master seed;
    each (point, replica) derives its own stream from it.
    """

    variable: str
    values: tuple[float, ...]
    oscillator: Oscillator
    measurement: Measurement
    fb_filter: FeedbackFilter
    sim_config: SimulationConfig
    replicas: int = 1
    segment_duration: float | None = None  # Welch segment length, s
    fit_band: float | None = None  # fit halfwidth around resonance, Hz
    adaptive_duration: bool = True

    def __post_init__(self) -> None:
        if self.variable not in _SWEEP_VARIABLES:
            raise ValueError(f"variable must be one of {_SWEEP_VARIABLES}")
        if len(self.values) == 0:
            raise ValueError("values must be non-empty")
        diffs = np.diff(self.values)
        if len(diffs) and not (np.all(diffs > 0) or np.all(diffs < 0)):
            raise ValueError("values must be strictly monotone")
        if self.replicas < 1:
            raise ValueError("replicas must be >= 1")


@dataclass
class PointRecord:
    """Outcome of one (value, replica) sweep point."""

    value: float
    replica: int
    seed: int
    ok: bool
    error: str | None
    metrics: dict = field(default_factory=dict)
    spectrum: Spectrum | None = None


@dataclass
class SweepResult:
    """All point records of one sweep plus provenance."""

    variable: str
    spec_hash: str
    records: list[PointRecord]

    def metric(self, name: str, default: float = math.nan) -> np.ndarray:
        """Array of one metric across records (NaN where missing/failed)."""
        return np.array(
            [rec.metrics.get(name, default) for rec in self.records], dtype=float
        )

    def values(self) -> np.ndarray:
        return np.array([rec.value for rec in self.records], dtype=float)


def _spec_hash(spec: SweepSpec) -> str:
    payload = json.dumps(dataclasses.asdict(spec), sort_keys=True, default=repr)
    return hashlib.sha256(payload.encode()).hexdigest()[:16]


def _point_seed(base_seed: int, point: int, replica: int) -> int:
    ss = np.random.SeedSequence((base_seed, point, replica))
    return int(ss.generate_state(1, np.uint64)[0])


def _segment_length(duration: float, sample_rate: float, segment_duration) -> int:
    seg = segment_duration if segment_duration else duration / 16.0
    seg = min(seg, duration / 4.0)
    return max(int(round(seg * sample_rate)), 32)


def crossover_power(meas: Measurement) -> float | None:
    """Power where shot-noise imprecision equals the extraneous floor."""
    if meas.extraneous_imprecision <= 0:
        return None
    probe = dataclasses.replace(meas, power=1.0)
    return shot_noise_imprecision(probe) / meas.extraneous_imprecision


def _run_power_point(spec: SweepSpec, idx: int, value: float, replica: int) -> PointRecord:
    seed = _point_seed(spec.sim_config.seed, idx, replica)
    meas = dataclasses.replace(spec.measurement, power=value)
    metrics = {
        "power": value,
        "shot_imprecision": shot_noise_imprecision(meas),
        "total_imprecision": total_imprecision(meas),
    }
    record = PointRecord(value, replica, seed, ok=True, error=None, metrics=metrics)
    try:
        filt = dataclasses.replace(spec.fb_filter, gain=0.0)
        cfg = dataclasses.replace(spec.sim_config, seed=seed)
        ts = simulate(spec.oscillator, meas, filt, cfg)
        nseg = _segment_length(ts.duration, cfg.sample_rate, spec.segment_duration)
        spec_y = welch_psd(ts.y, cfg.sample_rate, nseg)
        f0 = spec.oscillator.frequency
        sel = (spec_y.frequencies > 1.15 * f0) & (
            spec_y.frequencies < min(1.45 * f0, 0.45 * cfg.sample_rate)
        )
        if not np.any(sel):
            raise SimulationError("no off-resonant band available for the floor")
        metrics["floor_measured"] = float(np.mean(spec_y.psd[sel]))
        record.spectrum = spec_y.band(0.5 * f0, min(1.5 * f0, 0.45 * cfg.sample_rate))
    except (SimulationError, CalibrationError, FitError) as exc:
        record.ok = False
        record.error = str(exc)
    return record


def _run_gain_point(spec: SweepSpec, idx: int, value: float, replica: int) -> PointRecord:
    seed = _point_seed(spec.sim_config.seed, idx, replica)
    osc = spec.oscillator
    gain = float(value)
    metrics = {"gain": gain}
    record = PointRecord(value, replica, seed, ok=True, error=None, metrics=metrics)
    try:
        filt = dataclasses.replace(spec.fb_filter, gain=gain)
        loaded_rate = (1.0 + gain) * osc.gamma0  # rad/s
        duration = spec.sim_config.duration
        seg_duration = spec.segment_duration or duration / 16.0
        if spec.adaptive_duration:
            needed = max(2500.0 / loaded_rate, 16.0 * seg_duration)
            duration = min(spec.sim_config.duration, needed)
        cfg = dataclasses.replace(spec.sim_config, seed=seed, duration=duration)
        ts = simulate(osc, spec.measurement, filt, cfg)

        n_th = thermal_occupation(osc)
        n_imp = imprecision_quanta(total_imprecision(spec.measurement), osc)
        metrics["n_analytic"] = mean_phonon(n_th, n_imp, gain)
        metrics["n_sim"] = occupancy_from_variance(ts.x, osc).occupancy

        nseg = _segment_length(ts.duration, cfg.sample_rate, spec.segment_duration)
        spec_y = welch_psd(ts.y, cfg.sample_rate, nseg)

        f0 = osc.frequency
        halfwidth = spec.fit_band or max(
            10.0 * loaded_rate / (2.0 * math.pi), 20.0 * spec_y.df
        )
        keep = max(3.0 * halfwidth, 200.0 * spec_y.df)
        record.spectrum = spec_y.band(
            max(f0 - keep, 0.0), min(f0 + keep, 0.45 * cfg.sample_rate)
        )
        phase = effective_feedback(osc, filt, cfg.sample_rate).phase
        fit = fit_closed_loop(
            spec_y,
            osc,
            spec.measurement,
            phase,
            band=(f0 - halfwidth, f0 + halfwidth),
        )
        metrics["gain_fitted"] = fit.gain
        metrics["n_fit"] = fit.occupancy
        metrics["fit_valid"] = float(fit.valid)
        metrics["fit_residual"] = fit.residual

        # in-loop squashing: resonance bin below the analytic floor by >= 3
        # standard errors of the periodogram estimate
        floor = total_imprecision(spec.measurement)
        bin_idx = int(np.argmin(np.abs(spec_y.frequencies - f0)))
        bin_psd = float(spec_y.psd[bin_idx])
        sigma = bin_psd / math.sqrt(spec_y.averages)
        metrics["resonance_bin_psd"] = bin_psd
        metrics["floor_analytic"] = floor
        metrics["squashed"] = float(bin_psd < floor and (floor - bin_psd) >= 3.0 * sigma)
    except (SimulationError, CalibrationError, FitError) as exc:
        record.ok = False
        record.error = str(exc)
    return record


def _run_temperature_point(
    spec: SweepSpec, idx: int, value: float, replica: int
) -> PointRecord:
    seed = _point_seed(spec.sim_config.seed, idx, replica)
    osc = dataclasses.replace(spec.oscillator, bath_temperature=float(value))
    metrics = {
        "temperature": float(value),
        "n_th": thermal_occupation(osc),
        "gamma_th": osc.gamma0 * thermal_occupation(osc),
    }
    record = PointRecord(value, replica, seed, ok=True, error=None, metrics=metrics)
    try:
        filt = dataclasses.replace(spec.fb_filter, gain=0.0)
        cfg = dataclasses.replace(spec.sim_config, seed=seed)
        ts = simulate(osc, spec.measurement, filt, cfg)
        metrics["n_sim"] = occupancy_from_variance(ts.x, osc).occupancy
    except (SimulationError, CalibrationError, FitError) as exc:
        record.ok = False
        record.error = str(exc)
    return record


_POINT_RUNNERS = {
    "power": _run_power_point,
    "gain": _run_gain_point,
    "temperature": _run_temperature_point,
}


def _run_task(args) -> PointRecord:
    spec, idx, value, replica = args
    return _POINT_RUNNERS[spec.variable](spec, idx, value, replica)


def _execute(spec: SweepSpec, parallelism: int) -> SweepResult:
    tasks = [
        (spec, idx, value, replica)
        for idx, value in enumerate(spec.values)
        for replica in range(spec.replicas)
    ]
    if parallelism > 1:
        with ProcessPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(_run_task, tasks))
    else:
        records = [_run_task(task) for task in tasks]
    return SweepResult(spec.variable, _spec_hash(spec), records)


def power_sweep(spec: SweepSpec, parallelism: int = 1) -> SweepResult:
    """Open-loop imprecision floor versus optical power.

    Per point: analytic shot and total imprecision plus the measured
    off-resonant floor of the simulated record.  The shot/extraneous
    crossover power is attached to the result's first record metrics.
    """
    if spec.variable != "power":
        raise ValueError("power_sweep requires spec.variable == 'power'")
    if spec.fb_filter.gain != 0:
        raise ValueError("power sweep runs open loop; set filter gain to 0")
    result = _execute(spec, parallelism)
    crossover = crossover_power(spec.measurement)
    for rec in result.records:
        rec.metrics["crossover_power"] = (
            crossover if crossover is not None else math.nan
        )
    return result


def gain_sweep(spec: SweepSpec, parallelism: int = 1) -> SweepResult:
    """Cooling curve: fitted, simulated, and analytic occupancy per gain.

    The summary identifies the minimum fitted occupancy and the first gain
    beyond it where inference degrades (fit invalid or squashed while the
    fitted occupancy rises).
    """
    if spec.variable != "gain":
        raise ValueError("gain_sweep requires spec.variable == 'gain'")
    result = _execute(spec, parallelism)
    return result


def temperature_sweep(spec: SweepSpec, parallelism: int = 1) -> SweepResult:
    """Open-loop occupancy and decoherence versus bath temperature."""
    if spec.variable != "temperature":
        raise ValueError("temperature_sweep requires spec.variable == 'temperature'")
    return _execute(spec, parallelism)


def run_sweep(spec: SweepSpec, parallelism: int = 1) -> SweepResult:
    """Dispatch to the sweep matching ``spec.variable``."""
    if spec.variable == "power":
        return power_sweep(spec, parallelism)
    if spec.variable == "gain":
        return gain_sweep(spec, parallelism)
    return temperature_sweep(spec, parallelism)


def cooling_summary(result: SweepResult) -> dict:
    """Minimum fitted occupancy and the degradation gain of a gain sweep."""
    gains = result.values()
    n_fit = result.metric("n_fit")
    ok = np.isfinite(n_fit)
    if not np.any(ok):
        return {"min_n_fit": math.nan, "gain_at_min": math.nan, "degrade_gain": math.nan}
    i_min = int(np.nanargmin(n_fit))
    degrade = math.nan
    valid = result.metric("fit_valid", default=0.0)
    squashed = result.metric("squashed", default=0.0)
    for i in range(i_min + 1, len(gains)):
        if not ok[i]:
            continue
        if n_fit[i] > n_fit[i_min] and (valid[i] < 1.0 or squashed[i] > 0.0):
            degrade = float(gains[i])
            break
    return {
        "min_n_fit": float(n_fit[i_min]),
        "gain_at_min": float(gains[i_min]),
        "degrade_gain": degrade,
    }


@dataclass(frozen=True)
class DesignReport:
    """Noise-budget table with ground-state feasibility verdicts."""

    frequency: float  # Hz
    gamma0: float  # rad/s
    n_th: float
    gamma_th: float  # rad/s
    decoherence_ratio: float  # gamma_th / omega0
    decoherence_ok: bool  # gamma_th < omega0
    x_zp: float  # m
    sqrt_s_xx_zp: float  # m/rtHz
    sqrt_s_ff_th: float  # N/rtHz
    sqrt_s_imp_gs: float  # m/rtHz
    shot_imprecision: float | None = None  # m^2/Hz
    total_imprecision: float | None = None  # m^2/Hz
    n_imp: float | None = None
    imprecision_ok: bool | None = None  # total <= ground-state requirement
    min_occupancy_bound: float | None = None  # 2 sqrt(n_th n_imp)
    q_estimate: float | None = None
    heating_k_per_w: float | None = None

    def to_rows(self) -> list[tuple[str, str]]:
        rows = [
            ("frequency_hz", f"{self.frequency:.6g}"),
            ("gamma0_rad_s", f"{self.gamma0:.6g}"),
            ("n_th", f"{self.n_th:.6g}"),
            ("gamma_th_rad_s", f"{self.gamma_th:.6g}"),
            ("gamma_th_over_omega0", f"{self.decoherence_ratio:.6g}"),
            ("decoherence_ok", str(self.decoherence_ok).lower()),
            ("x_zp_m", f"{self.x_zp:.6g}"),
            ("sqrt_s_xx_zp_m_rthz", f"{self.sqrt_s_xx_zp:.6g}"),
            ("sqrt_s_ff_th_n_rthz", f"{self.sqrt_s_ff_th:.6g}"),
            ("sqrt_s_imp_gs_m_rthz", f"{self.sqrt_s_imp_gs:.6g}"),
        ]
        if self.shot_imprecision is not None:
            rows += [
                ("shot_imprecision_m2_hz", f"{self.shot_imprecision:.6g}"),
                ("total_imprecision_m2_hz", f"{self.total_imprecision:.6g}"),
                ("n_imp", f"{self.n_imp:.6g}"),
                ("imprecision_ok", str(self.imprecision_ok).lower()),
                ("min_occupancy_bound", f"{self.min_occupancy_bound:.6g}"),
            ]
        if self.q_estimate is not None:
            rows.append(("q_estimate", f"{self.q_estimate:.6g}"))
        if self.heating_k_per_w is not None:
            rows.append(("heating_k_per_w", f"{self.heating_k_per_w:.6g}"))
        return rows

    def to_text(self) -> str:
        width = max(len(key) for key, _ in self.to_rows())
        lines = ["device noise budget"]
        lines += [f"{key.ljust(width)}  {value}" for key, value in self.to_rows()]
        return "\n".join(lines) + "\n"


def design_report(
    osc: Oscillator,
    geometry: DeviceGeometry | None = None,
    meas: Measurement | None = None,
) -> DesignReport:
    """Assemble the noise budget and feasibility verdicts for one device."""
    budget = noise_budget(osc)
    kwargs: dict = {}
    if meas is not None:
        shot = shot_noise_imprecision(meas)
        total = total_imprecision(meas)
        n_imp = imprecision_quanta(total, osc)
        kwargs.update(
            shot_imprecision=shot,
            total_imprecision=total,
            n_imp=n_imp,
            imprecision_ok=bool(total <= gs_imprecision_requirement(osc)),
            min_occupancy_bound=optimal_gain(budget.n_th, n_imp).occupancy_bound
            if n_imp > 0
            else None,
        )
    if geometry is not None:
        kwargs.update(
            q_estimate=q_scaling_estimate(geometry),
            heating_k_per_w=absorption_heating(geometry),
        )
    return DesignReport(
        frequency=osc.frequency,
        gamma0=osc.gamma0,
        n_th=budget.n_th,
        gamma_th=budget.gamma_th,
        decoherence_ratio=budget.gamma_th / osc.omega0,
        decoherence_ok=bool(budget.gamma_th < osc.omega0),
        x_zp=budget.x_zp,
        sqrt_s_xx_zp=math.sqrt(budget.s_xx_zp),
        sqrt_s_ff_th=math.sqrt(budget.s_ff_th),
        sqrt_s_imp_gs=math.sqrt(budget.s_xx_imp_gs),
        **kwargs,
    )


def save_sweep(result: SweepResult, outdir, extra_manifest: dict | None = None) -> Path:
    """Persist a sweep as manifest.json + summary.csv + per-point spectra.

    All files carry the sweep-spec hash (and the config hash when present
    in ``extra_manifest``) so artifacts are traceable to their inputs.
    """
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    spectra_dir = outdir / "spectra"
    spectra_dir.mkdir(exist_ok=True)

    hash_header = {"spec_hash": result.spec_hash}
    if extra_manifest and "config_hash" in extra_manifest:
        hash_header["config_hash"] = extra_manifest["config_hash"]

    metric_keys = sorted({key for rec in result.records for key in rec.metrics})
    manifest_points = []
    summary_lines = [
        f"# {key}: {value}" for key, value in sorted(hash_header.items())
    ]
    summary_lines.append(",".join(["value", "replica", "seed", "ok"] + metric_keys))
    for i, rec in enumerate(result.records):
        spectrum_file = None
        if rec.spectrum is not None:
            spectrum_file = f"spectra/point_{i:03d}.csv"
            spectrum_to_csv(
                rec.spectrum,
                outdir / spectrum_file,
                extra_header={**hash_header, "value": rec.value},
            )
        manifest_points.append(
            {
                "value": rec.value,
                "replica": rec.replica,
                "seed": rec.seed,
                "ok": rec.ok,
                "error": rec.error,
                "spectrum": spectrum_file,
                "metrics": {k: rec.metrics.get(k) for k in sorted(rec.metrics)},
            }
        )
        row = [f"{rec.value!r}", str(rec.replica), str(rec.seed), str(rec.ok).lower()]
        for key in metric_keys:
            value = rec.metrics.get(key, math.nan)
            row.append(f"{value!r}" if isinstance(value, float) else str(value))
        summary_lines.append(",".join(row))

    manifest = {
        "format": "fbcool-sweep v1",
        "variable": result.variable,
        "spec_hash": result.spec_hash,
        "points": manifest_points,
    }
    if extra_manifest:
        manifest.update(extra_manifest)
    (outdir / "manifest.json").write_text(
        json.dumps(manifest, sort_keys=True, indent=2) + "\n"
    )
    (outdir / "summary.csv").write_text("\n".join(summary_lines) + "\n")
    return outdir
