"""Shared device definitions and helpers for the test suite."""

import math

import numpy as np
import pytest

import fbcool as fb

# pass/fail lines recorded by the acceptance tests; echoed in the summary
ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter, exitstatus, config):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)

# reference high-Q tethered-membrane device (room temperature)
REF_FREQUENCY = 39.9e3  # Hz
REF_OMEGA0 = 2.0 * math.pi * REF_FREQUENCY
REF_MASS = 12e-12  # kg
REF_Q = 2.6e7
REF_Q_PRISTINE = 3.0e7  # before contamination-limited damping


def ref_oscillator(q0: float = REF_Q, temperature: float = 300.0) -> fb.Oscillator:
    return fb.Oscillator(
        omega0=REF_OMEGA0, q0=q0, mass=REF_MASS, bath_temperature=temperature
    )


def ref_measurement(
    power: float = 3e-3, floor_asd: float = 10e-15
) -> fb.Measurement:
    return fb.Measurement(
        power=power,
        wavelength=850e-9,
        reflectance=0.3,
        efficiency=0.1,
        extraneous_imprecision=floor_asd**2,
    )


def ref_geometry(absorption: float = 10e-6) -> fb.DeviceGeometry:
    return fb.DeviceGeometry(
        tether_length=1.7e-3,
        tether_width=4.2e-6,
        thickness=90e-9,
        stress=0.9e9,
        q_material=6e3,
        thermal_conductivity=3.0,
        absorption=absorption,
        window_size=2.5e-3,
    )


def toy_oscillator(q0: float = 100.0, temperature: float = 300.0) -> fb.Oscillator:
    return fb.Oscillator(
        omega0=2.0 * math.pi * 1e3, q0=q0, mass=1e-12, bath_temperature=temperature
    )


def toy_measurement(
    osc: fb.Oscillator, n_imp: float | None = None
) -> fb.Measurement:
    """Measurement whose extraneous floor realizes the requested quanta."""
    floor = 0.0
    if n_imp is not None:
        floor = 2.0 * fb.zero_point_psd(osc) * n_imp
    return fb.Measurement(
        power=1.0,  # shot noise negligible next to the floor
        wavelength=850e-9,
        reflectance=0.3,
        efficiency=0.1,
        extraneous_imprecision=floor,
    )


def subband_ratios(data: np.ndarray, model: np.ndarray, n_bands: int) -> np.ndarray:
    """Per-bin data/model ratio averaged over n_bands contiguous sub-bands.

    Averaging the per-bin ratios (rather than the band powers) keeps the
    estimator variance uniform across bands even where the model spans
    orders of magnitude.
    """
    ratio = np.asarray(data) / np.asarray(model)
    edges = np.linspace(0, len(ratio), n_bands + 1).astype(int)
    return np.array([np.mean(ratio[a:b]) for a, b in zip(edges[:-1], edges[1:])])


@pytest.fixture(scope="session")
def toy_record():
    """Open-loop toy run shared by spectral tests: (osc, meas, timeseries)."""
    osc = toy_oscillator(q0=100.0)
    meas = toy_measurement(osc, n_imp=50.0)
    filt = fb.design_feedback_filter(osc, 32e3, gain=0.0)
    cfg = fb.SimulationConfig(sample_rate=32e3, duration=100.0, seed=91)
    ts = fb.simulate(osc, meas, filt, cfg)
    return osc, meas, ts
