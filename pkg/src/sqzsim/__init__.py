"""Simulator for squeezed light sharing a fiber with a classical channel,
detected with a phase-locked local oscillator."""

from .homodyne import (
    HomodyneRecord,
    PhaseHistogram,
    PsdEstimate,
    band_noise_power,
    normalize_to_shot,
    phase_histogram_fit,
    pilot_phase_profile,
    synthesize_trace,
    welch_psd,
)
from .lockloop import (
    LockParams,
    LockResult,
    iq_demodulate,
    laser_phase_walk,
    phase_detect,
    pi_step,
    run_lock,
)
from .scenarios import (
    ScenarioConfig,
    ScenarioReport,
    fit_insertion_loss,
    link_calibration,
    noise_budget_report,
    run_llo,
    run_tlo_reference,
)
from .sqzmodel import (
    ChannelParams,
    OpoParams,
    PhaseNoiseModel,
    QuadratureSpectrum,
    add_excess_noise,
    apply_loss,
    calibrate_pump,
    db,
    opo_spectrum,
    phase_noise_average,
    transmittance_of,
    undb,
)

__version__ = "0.1.0"
