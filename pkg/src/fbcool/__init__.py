"""Feedback-cooling simulator and analysis toolkit.

Models, simulates, and analyzes measurement-based feedback cooling (cold
damping) of a high-Q nanomechanical oscillator read out interferometrically:
closed-form noise budgets and cooling limits, time-domain Langevin
simulation of the closed loop, calibrated spectral estimation with
closed-loop model fitting, and reproducible parameter sweeps.
"""

from .model import (
    CODATA,
    CoolingOptimum,
    DeviceGeometry,
    Feedback,
    Measurement,
    NoiseBudget,
    Oscillator,
    PhysicalConstants,
    absorption_heating,
    backaction_quanta,
    closed_loop_susceptibility,
    effective_temperature,
    gs_imprecision_requirement,
    imprecision_quanta,
    mean_phonon,
    noise_budget,
    optimal_gain,
    q_scaling_estimate,
    shot_noise_imprecision,
    spectrum_x_model,
    spectrum_y_model,
    thermal_decoherence_rate,
    thermal_force_noise,
    thermal_occupation,
    total_imprecision,
    zero_point_motion,
    zero_point_psd,
)
from .langevin import (
    CalibrationTone,
    FeedbackFilter,
    LoopDiagnostics,
    SimulationConfig,
    SimulationError,
    TimeSeries,
    UnstableLoopError,
    design_feedback_filter,
    effective_feedback,
    filter_frequency_response,
    measure_loop_transfer,
    simulate,
)
from .spectral import (
    CalibrationError,
    CalibrationResult,
    FitError,
    FitResult,
    OccupancyEstimate,
    Spectrum,
    SpectralError,
    calibrate,
    fit_closed_loop,
    occupancy_from_variance,
    welch_psd,
)
from .experiments import (
    DesignReport,
    PointRecord,
    SweepResult,
    SweepSpec,
    cooling_summary,
    crossover_power,
    design_report,
    gain_sweep,
    power_sweep,
    run_sweep,
    save_sweep,
    temperature_sweep,
)
from .config import AnalysisOptions, ConfigError, RunConfig, load_config, parse_config

__version__ = "0.1.0"
