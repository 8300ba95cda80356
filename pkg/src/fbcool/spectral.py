"""Spectral estimation, displacement calibration, and closed-loop fitting.

Turns sampled records into calibrated single-sided PSDs (Welch), bootstraps
the meters-per-unit scale from the area beneath the thermal noise peak, and
fits the closed-loop apparent-displacement model with the loop gain as the
single free parameter to infer the mode occupancy.
"""

from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np
from scipy import optimize, signal

from .model import (
    Feedback,
    Measurement,
    Oscillator,
    effective_temperature,
    imprecision_quanta,
    mean_phonon,
    thermal_occupation,
    total_imprecision,
    zero_point_motion,
    zero_point_psd,
    closed_loop_susceptibility,
)

__all__ = [
    "CalibrationError",
    "CalibrationResult",
    "FitError",
    "FitResult",
    "OccupancyEstimate",
    "Spectrum",
    "SpectralError",
    "welch_psd",
    "calibrate",
    "fit_closed_loop",
    "occupancy_from_variance",
    "spectrum_to_csv",
    "spectrum_from_csv",
    "fit_report_text",
]


class SpectralError(ValueError):
    """Raised for invalid spectral-estimation inputs."""


class CalibrationError(RuntimeError):
    """Raised when the thermal-area bootstrap cannot be performed."""


class FitError(RuntimeError):
    """Raised when the closed-loop fit cannot converge.

    ``last_gain`` holds the last iterate when available.
    """

    def __init__(self, message: str, last_gain: float | None = None):
        super().__init__(message)
        self.last_gain = last_gain


@dataclass(frozen=True, eq=False)
class Spectrum:
    """Single-sided PSD estimate on a uniform frequency grid.

    ``psd`` is in (input units)^2 per Hz; ``resolution_bandwidth`` is the
    equivalent noise bandwidth of the taper in Hz.  The estimator variance
    per bin is approximately psd^2 / averages.
    """

    frequencies: np.ndarray  # Hz
    psd: np.ndarray
    resolution_bandwidth: float  # Hz
    averages: int
    window: str = "hann"
    sample_rate: float = 0.0  # Hz; 0 when unknown
    n_samples: int = 0

    def __post_init__(self) -> None:
        if len(self.frequencies) != len(self.psd):
            raise SpectralError("frequency grid and psd must have equal length")
        if np.any(np.diff(self.frequencies) <= 0):
            raise SpectralError("frequency grid must be strictly increasing")

    @property
    def df(self) -> float:
        return float(self.frequencies[1] - self.frequencies[0])

    @property
    def duration(self) -> float:
        """Record duration in seconds (0 when unknown)."""
        if self.sample_rate <= 0:
            return 0.0
        return self.n_samples / self.sample_rate

    def scaled(self, factor: float) -> "Spectrum":
        """Return a copy with the PSD multiplied by ``factor`` (unit change)."""
        return Spectrum(
            frequencies=self.frequencies,
            psd=self.psd * factor,
            resolution_bandwidth=self.resolution_bandwidth,
            averages=self.averages,
            window=self.window,
            sample_rate=self.sample_rate,
            n_samples=self.n_samples,
        )

    def band(self, f_lo: float, f_hi: float) -> "Spectrum":
        """Restrict to [f_lo, f_hi] Hz (copy); estimator metadata unchanged."""
        sel = (self.frequencies >= f_lo) & (self.frequencies <= f_hi)
        if np.count_nonzero(sel) < 2:
            raise SpectralError("band contains fewer than 2 bins")
        return Spectrum(
            frequencies=self.frequencies[sel].copy(),
            psd=self.psd[sel].copy(),
            resolution_bandwidth=self.resolution_bandwidth,
            averages=self.averages,
            window=self.window,
            sample_rate=self.sample_rate,
            n_samples=self.n_samples,
        )


def welch_psd(
    values,
    sample_rate: float,
    segment_length: int,
    window: str = "hann",
    overlap: float = 0.5,
) -> Spectrum:
    """Averaged-periodogram (Welch) single-sided PSD estimate.

    Density-normalized: a sinusoid of amplitude A integrates to A^2/2 over
    its peak and white noise of variance sigma^2 integrates to sigma^2
    over [0, Nyquist].
    """
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise SpectralError("expected a one-dimensional record")
    if segment_length > len(values):
        raise SpectralError(
            f"record of {len(values)} samples is shorter than one "
            f"segment ({segment_length})"
        )
    if segment_length < 8:
        raise SpectralError("segment_length must be >= 8")
    if not (0.0 <= overlap <= 0.9):
        raise SpectralError("overlap must be in [0, 0.9]")
    noverlap = int(round(overlap * segment_length))
    freqs, psd = signal.welch(
        values,
        fs=sample_rate,
        window=window,
        nperseg=segment_length,
        noverlap=noverlap,
        detrend="constant",
        scaling="density",
    )
    taper = signal.get_window(window, segment_length)
    enbw = sample_rate * np.sum(taper**2) / np.sum(taper) ** 2
    averages = 1 + (len(values) - segment_length) // (segment_length - noverlap)
    return Spectrum(
        frequencies=freqs,
        psd=psd,
        resolution_bandwidth=float(enbw),
        averages=int(averages),
        window=window,
        sample_rate=float(sample_rate),
        n_samples=len(values),
    )


@dataclass(frozen=True)
class CalibrationResult:
    """Displacement calibration from the thermal-noise area.

    ``meters_per_unit`` converts raw record units to meters;
    ``tone_amplitude`` is the calibrated coherent-tone amplitude for
    cross-checking; ``averaging_warning`` is set when the record is
    shorter than one mechanical amplitude correlation time (Q0/omega0),
    in which case the thermal area is statistically unreliable.
    """

    meters_per_unit: float
    tone_frequency: float  # Hz
    inferred_thermal_area: float  # m^2
    tone_amplitude: float  # m
    averaging_warning: bool

    def __post_init__(self) -> None:
        if not (self.meters_per_unit > 0):
            raise ValueError("meters_per_unit must be positive")


def calibrate(
    spectrum: Spectrum, tone_frequency: float, osc: Oscillator
) -> CalibrationResult:
    """Bootstrap the displacement scale from the thermal peak area.

    The scale factor is set so the area beneath the thermal peak equals
    the equipartition value 2 x_zp^2 n_th.  The integration band spans
    +-20 linewidths around resonance (at least +-8 bins when the line is
    unresolved); the calibration tone is excluded with a +-3 bin guard.
    """
    f = spectrum.frequencies
    p = spectrum.psd
    df = spectrum.df
    f0 = osc.frequency
    linewidth = osc.gamma0 / (2.0 * math.pi)

    if abs(tone_frequency - f0) <= max(linewidth, 3.0 * df):
        raise CalibrationError(
            "calibration tone lies within the thermal linewidth; "
            "cannot separate tone from thermal peak"
        )
    half = max(20.0 * linewidth, 8.0 * df)
    in_band = np.abs(f - f0) <= half
    if np.count_nonzero(in_band) < 5:
        raise CalibrationError("spectrum does not cover the thermal peak")
    tone_guard = np.abs(f - tone_frequency) <= 3.0 * df
    if not np.any(tone_guard):
        raise CalibrationError("calibration tone frequency is outside the spectrum")

    thermal_sel = in_band & ~tone_guard
    peak = float(np.max(p[thermal_sel]))
    background = float(np.median(p[~in_band])) if np.any(~in_band) else 0.0
    if background > 0 and peak < 10.0 * background:
        raise CalibrationError("no resolvable thermal peak above the noise floor")

    raw_area = float(np.sum(p[thermal_sel]) * df)
    if raw_area <= 0:
        raise CalibrationError("thermal peak area is not positive")
    target_area = 2.0 * zero_point_motion(osc) ** 2 * thermal_occupation(osc)
    meters_per_unit = math.sqrt(target_area / raw_area)

    # tone amplitude cross-check: integrate the guarded bins above the
    # local floor estimated from the surrounding ring
    ring = (np.abs(f - tone_frequency) > 3.0 * df) & (
        np.abs(f - tone_frequency) <= 10.0 * df
    )
    local_floor = float(np.median(p[ring])) if np.any(ring) else 0.0
    tone_peak = float(np.max(p[tone_guard]))
    if local_floor > 0 and tone_peak < 5.0 * local_floor:
        raise CalibrationError("calibration tone not found above the local floor")
    tone_area_raw = max(float(np.sum(p[tone_guard] - local_floor) * df), 0.0)
    tone_amplitude = meters_per_unit * math.sqrt(2.0 * tone_area_raw)

    duration = spectrum.duration
    averaging_warning = duration <= 0 or duration * osc.gamma0 < 1.0
    return CalibrationResult(
        meters_per_unit=meters_per_unit,
        tone_frequency=tone_frequency,
        inferred_thermal_area=meters_per_unit**2 * raw_area,
        tone_amplitude=tone_amplitude,
        averaging_warning=averaging_warning,
    )


@dataclass(frozen=True)
class FitResult:
    """Closed-loop spectrum fit with the loop gain as free parameter.

    ``residual`` is the normalized chi-square of the weighted fit (about 1
    for a good fit); ``valid`` is False when the fitted thermal peak rises
    less than a factor 2 above the imprecision floor, the regime where the
    inferred occupancy is no longer trustworthy.
    """

    gain: float
    occupancy: float
    residual: float
    n_th: float
    n_imp: float
    gamma0: float  # rad/s
    phase: float  # rad
    floor: float  # m^2/Hz
    valid: bool
    gain_clipped: bool


class OccupancyEstimate(NamedTuple):
    """Occupancy from a calibrated displacement variance."""

    occupancy: float
    zero_point_limited: bool  # True when the raw estimate fell below zero


def occupancy_from_variance(
    values, osc: Oscillator, meters_per_unit: float = 1.0
) -> OccupancyEstimate:
    """Mode occupancy <x^2> / (2 x_zp^2) - 1/2 from a calibrated record."""
    x = np.asarray(values, dtype=float) * meters_per_unit
    occ = float(np.mean(x**2)) / (2.0 * zero_point_motion(osc) ** 2) - 0.5
    if occ < 0.0:
        return OccupancyEstimate(0.0, True)
    return OccupancyEstimate(occ, False)


def _closed_loop_psd(
    osc: Oscillator,
    omega: np.ndarray,
    gain: float,
    phase: float,
    n_th: float,
    n_imp: float,
    floor_scale: float,
) -> np.ndarray:
    chi2 = np.abs(
        closed_loop_susceptibility(osc, Feedback(gain=gain, phase=phase), omega)
    ) ** 2
    return 2.0 * zero_point_psd(osc) * (chi2 * n_th + n_imp * floor_scale)


def fit_closed_loop(
    spectrum: Spectrum,
    osc: Oscillator,
    meas: Measurement,
    phase: float,
    band: tuple[float, float] | None = None,
    n_th: float | None = None,
    n_imp: float | None = None,
    fit_floor: bool = False,
) -> FitResult:
    """Weighted least-squares fit of the apparent-displacement spectrum.

    The model is the damped thermal peak plus flat imprecision floor with
    n_th, n_imp, gamma0 and the loop phase held fixed (overridable via
    ``n_th`` / ``n_imp``); only the gain is free, unless ``fit_floor``
    additionally frees a floor scale.  Bins are weighted by 1/model^2,
    the appropriate weighting for averaged periodograms.

    ``band`` restricts the fit to [f_lo, f_hi] in Hz; default is the full
    spectrum.  The occupancy is evaluated from the fitted gain.
    """
    if n_th is None:
        n_th = thermal_occupation(osc)
    if n_imp is None:
        n_imp = imprecision_quanta(total_imprecision(meas), osc)
    if n_th <= 0 or n_imp <= 0:
        raise FitError("fit requires positive n_th and n_imp")

    f = spectrum.frequencies
    mask = f > 0
    if band is not None:
        mask &= (f >= band[0]) & (f <= band[1])
    f_fit = f[mask]
    d_fit = spectrum.psd[mask]
    if len(f_fit) < 8:
        raise FitError("fewer than 8 bins in the fit band")
    if not np.all(np.isfinite(d_fit)) or np.all(d_fit <= 0):
        raise FitError("spectrum data in the fit band is degenerate")
    omega = 2.0 * math.pi * f_fit

    def objective(log10_g: float, floor_scale: float = 1.0) -> float:
        g = 10.0**log10_g
        model = _closed_loop_psd(osc, omega, g, phase, n_th, n_imp, floor_scale)
        r = (d_fit - model) / model
        return float(np.dot(r, r))

    def objective_zero_gain(floor_scale: float = 1.0) -> float:
        model = _closed_loop_psd(osc, omega, 0.0, phase, n_th, n_imp, floor_scale)
        r = (d_fit - model) / model
        return float(np.dot(r, r))

    floor_scale = 1.0
    lo, hi = -3.0, 8.0
    grid = np.linspace(lo, hi, 160)
    values = np.array([objective(t) for t in grid])
    if not np.any(np.isfinite(values)):
        raise FitError("fit objective is non-finite everywhere", last_gain=None)
    best = int(np.nanargmin(values))
    t_lo = grid[max(best - 1, 0)]
    t_hi = grid[min(best + 1, len(grid) - 1)]
    res = optimize.minimize_scalar(
        objective, bounds=(t_lo, t_hi), method="bounded",
        options={"xatol": 1e-7},
    )
    if not res.success:
        raise FitError("gain optimization did not converge", last_gain=10.0**res.x)
    gain = float(10.0**res.x)
    chi2 = float(res.fun)

    gain_clipped = False
    if objective_zero_gain() <= chi2:
        gain, chi2, gain_clipped = 0.0, objective_zero_gain(), True

    if fit_floor:
        def resid(params):
            g = 10.0 ** params[0]
            scale = 10.0 ** params[1]
            model = _closed_loop_psd(osc, omega, g, phase, n_th, n_imp, scale)
            return (d_fit - model) / model

        start = [math.log10(max(gain, 1e-3)), 0.0]
        ls = optimize.least_squares(resid, start, method="lm", max_nfev=400)
        if not ls.success:
            raise FitError(
                "joint gain/floor fit did not converge",
                last_gain=10.0 ** ls.x[0],
            )
        gain = float(10.0 ** ls.x[0])
        floor_scale = float(10.0 ** ls.x[1])
        chi2 = float(2.0 * ls.cost)

    dof = max(len(f_fit) - (2 if fit_floor else 1), 1)
    residual = chi2 * spectrum.averages / dof

    floor = 2.0 * zero_point_psd(osc) * n_imp * floor_scale
    peak = 2.0 * zero_point_psd(osc) * (
        n_th / (1.0 + gain) ** 2 + n_imp * floor_scale
    )
    return FitResult(
        gain=gain,
        occupancy=mean_phonon(n_th, n_imp, gain),
        residual=residual,
        n_th=n_th,
        n_imp=n_imp,
        gamma0=osc.gamma0,
        phase=phase,
        floor=floor,
        valid=bool(peak >= 2.0 * floor),
        gain_clipped=gain_clipped,
    )


def spectrum_to_csv(spectrum: Spectrum, path, extra_header: dict | None = None) -> None:
    """Write frequency,psd columns with a '#'-prefixed metadata header."""
    header = {
        "resolution_bandwidth": spectrum.resolution_bandwidth,
        "averages": spectrum.averages,
        "window": spectrum.window,
        "sample_rate": spectrum.sample_rate,
        "n_samples": spectrum.n_samples,
    }
    if extra_header:
        header.update(extra_header)
    with open(path, "w", newline="") as fh:
        fh.write("# fbcool-spectrum v1\n")
        for key in sorted(header):
            fh.write(f"# {key}: {json.dumps(header[key], sort_keys=True)}\n")
        fh.write("frequency_hz,psd\n")
        np.savetxt(
            fh,
            np.column_stack([spectrum.frequencies, spectrum.psd]),
            fmt="%.17e",
            delimiter=",",
        )


def spectrum_from_csv(path) -> Spectrum:
    meta: dict = {}
    body = []
    with open(path) as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("#"):
                stripped = line[1:].strip()
                if ":" in stripped:
                    key, _, value = stripped.partition(":")
                    try:
                        meta[key.strip()] = json.loads(value.strip())
                    except json.JSONDecodeError:
                        meta[key.strip()] = value.strip()
            elif line and not line.startswith("frequency_hz"):
                body.append(line)
    data = np.atleast_2d(np.loadtxt(io.StringIO("\n".join(body)), delimiter=","))
    return Spectrum(
        frequencies=data[:, 0],
        psd=data[:, 1],
        resolution_bandwidth=float(meta.get("resolution_bandwidth", 0.0)),
        averages=int(meta.get("averages", 1)),
        window=str(meta.get("window", "hann")),
        sample_rate=float(meta.get("sample_rate", 0.0)),
        n_samples=int(meta.get("n_samples", 0)),
    )


def fit_report_text(fit: FitResult, osc: Oscillator, extra: dict | None = None) -> str:
    """Human-readable fit summary (gain, occupancy, T_eff, residual, validity)."""
    lines = ["closed-loop spectrum fit"]
    if extra:
        for key in sorted(extra):
            lines.append(f"{key}: {extra[key]}")
    lines += [
        f"fitted_gain: {fit.gain:.6g}",
        f"occupancy: {fit.occupancy:.6g}",
        f"effective_temperature_K: {effective_temperature(fit.occupancy, osc):.6g}",
        f"residual_chi2: {fit.residual:.6g}",
        f"imprecision_floor_m2_per_hz: {fit.floor:.6g}",
        f"valid: {str(fit.valid).lower()}",
        f"gain_clipped: {str(fit.gain_clipped).lower()}",
        f"fixed_n_th: {fit.n_th:.6g}",
        f"fixed_n_imp: {fit.n_imp:.6g}",
        f"fixed_gamma0_rad_s: {fit.gamma0:.6g}",
        f"fixed_phase_rad: {fit.phase:.6g}",
    ]
    return "\n".join(lines) + "\n"
