"""Discrete-time heterodyne optical phase-locked loop.

The receiver laser (LLO) is locked to a pilot tone that rides along with the
squeezed light. The loop runs at baseband at ``loop_rate``:

* each update the detector reports the wrapped phase error plus a white
  measurement floor set by the pilot carrier-to-noise ratio;
* the proportional branch drives the EOM, which applies the correction on top
  of its present bias (so the EOM holds an accumulated phase, limited to
  ``±eom_range``);
* the integral branch drives the laser piezo as a frequency offset, seen by the
  optics through a first-order low-pass at ``piezo_bandwidth``.

The RF side (40 MHz beat, I/Q mixing) is only simulated by :func:`iq_demodulate`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import signal

from .sqzmodel import ParameterError


class ConfigurationError(ValueError):
    """Sampling or filter settings are inconsistent (aliasing, bad cutoff)."""


class UndefinedPhaseError(ValueError):
    """Phase requested for a zero-amplitude (I, Q) pair."""


def wrap_phase(phi):
    """Wrap to (−π, π]."""
    out = np.pi - np.mod(np.pi - np.asarray(phi, dtype=float), 2.0 * np.pi)
    return float(out) if out.ndim == 0 else out


def phase_floor_from_cnr(cnr_db):
    """Rms phase error per update for a pilot at ``cnr_db`` within the detection bandwidth."""
    return 10.0 ** (-cnr_db / 20.0)


def gains_for_bandwidth(unity_gain_bw, loop_rate, zero_ratio=10.0):
    """PI gains placing the loop unity-gain frequency at ``unity_gain_bw``.

    The EOM branch alone is a delayed discrete integrator, |kp / (z − 1)| = 1 at
    the target frequency. The integral branch crosses over with it one
    ``zero_ratio`` below, which makes the loop type 2 at low frequency.
    Returns ``(kp, ki)`` with kp in rad/rad and ki in Hz/rad per update.
    """
    if not 0 < unity_gain_bw < loop_rate / 2:
        raise ParameterError("unity-gain bandwidth must lie in (0, loop_rate/2)")
    kp = 2.0 * math.sin(math.pi * unity_gain_bw / loop_rate)
    ki = kp * unity_gain_bw / zero_ratio
    return kp, ki


@dataclass(frozen=True)
class LockParams:
    """Lock loop configuration.

    Gains default to a 200 kHz unity-gain design at 1 MHz. None of the loop
    parameters are published; they are reconstructions chosen so the residual
    phase noise lands near the measured value.
    """

    loop_rate: float = 1e6
    kp: float = field(default_factory=lambda: gains_for_bandwidth(200e3, 1e6)[0])
    ki: float = field(default_factory=lambda: gains_for_bandwidth(200e3, 1e6)[1])
    linewidth_source: float = 100.0
    linewidth_llo: float = 100.0
    clock_offset_ppm: float = 0.0
    demod_freq: float = 40e6
    detector_phase_noise_floor: float = 0.01
    piezo_bandwidth: float = 50e3
    piezo_range: float = 50e6
    eom_range: float = 2 * np.pi
    initial_offset: float = 0.0

    def __post_init__(self):
        if self.loop_rate <= 0:
            raise ParameterError("loop_rate must be > 0")
        if self.kp < 0 or self.ki < 0:
            raise ParameterError("gains must be >= 0")
        if self.linewidth_source < 0 or self.linewidth_llo < 0:
            raise ParameterError("linewidths must be >= 0")
        if self.detector_phase_noise_floor < 0:
            raise ParameterError("detector_phase_noise_floor must be >= 0")
        if self.piezo_bandwidth <= 0:
            raise ParameterError("piezo_bandwidth must be > 0")
        if self.piezo_range <= 0 or self.eom_range <= 0:
            raise ParameterError("actuator ranges must be > 0")
        if self.demod_freq <= 0:
            raise ParameterError("demod_freq must be > 0")

    @classmethod
    def for_bandwidth(cls, unity_gain_bw=200e3, loop_rate=1e6, zero_ratio=10.0, **kwargs):
        kp, ki = gains_for_bandwidth(unity_gain_bw, loop_rate, zero_ratio)
        return cls(loop_rate=loop_rate, kp=kp, ki=ki, **kwargs)

    @property
    def clock_offset_hz(self):
        return self.clock_offset_ppm * 1e-6 * self.demod_freq

    def noiseless(self):
        return replace(self, linewidth_source=0.0, linewidth_llo=0.0,
                       detector_phase_noise_floor=0.0)


@dataclass
class LockResult:
    phase_error_trace: np.ndarray
    loop_rate: float
    residual_sigma: float
    residual_mean: float
    acquired: bool
    acquisition_time: float

    @property
    def times(self):
        return np.arange(self.phase_error_trace.size) / self.loop_rate

    def locked_segment(self):
        """Final 80 % of the trace, the part used for the residual statistics."""
        n = self.phase_error_trace.size
        return self.phase_error_trace[n - int(round(0.8 * n)):]

    def write_trace(self, path):
        """Two-column text dump: time_s, phase_error_rad."""
        np.savetxt(path, np.column_stack([self.times, self.phase_error_trace]),
                   fmt="%.9e", header="time_s phase_error_rad")


def laser_phase_walk(linewidth, sample_rate, n, seed=None):
    """Wiener phase trajectory of a laser with Lorentzian FWHM ``linewidth``.

    Increments are Normal(0, 2π·linewidth/sample_rate); the walk starts at 0.
    ``seed`` may be an int or a ``numpy.random.Generator``.
    """
    if sample_rate <= 0:
        raise ParameterError("sample_rate must be > 0")
    if n < 1:
        raise ParameterError("need at least one sample")
    if linewidth < 0:
        raise ParameterError("linewidth must be >= 0")
    rng = np.random.default_rng(seed)
    steps = rng.normal(0.0, math.sqrt(2 * math.pi * linewidth / sample_rate), n - 1)
    return np.concatenate([[0.0], np.cumsum(steps)])


def iq_demodulate(samples, f_demod, sample_rate, lpf_cutoff, order=4):
    """Mix a real RF record down to baseband I/Q.

    A tone cos(2π f_demod t + φ) yields I → cos(φ)/2 and Q → sin(φ)/2, so
    ``atan2(Q, I)`` recovers φ. Filtering is zero-phase Butterworth.
    """
    if not 0 < f_demod < sample_rate / 2:
        raise ConfigurationError(
            f"demodulation frequency {f_demod:g} Hz must lie below Nyquist ({sample_rate / 2:g} Hz)")
    if not 0 < lpf_cutoff < f_demod:
        raise ConfigurationError("low-pass cutoff must be positive and below f_demod")
    x = np.asarray(samples, dtype=float)
    arg = 2 * np.pi * f_demod / sample_rate * np.arange(x.size)
    sos = signal.butter(order, lpf_cutoff, fs=sample_rate, output="sos")
    i = signal.sosfiltfilt(sos, x * np.cos(arg))
    q = signal.sosfiltfilt(sos, -x * np.sin(arg))
    return i, q


def phase_detect(i, q):
    """Four-quadrant phase in (−π, π]."""
    i = np.asarray(i, dtype=float)
    q = np.asarray(q, dtype=float)
    if np.any((i == 0) & (q == 0)):
        raise UndefinedPhaseError("phase undefined for I = Q = 0")
    out = wrap_phase(np.arctan2(q, i))
    return float(out) if np.ndim(out) == 0 else out


@dataclass
class PIState:
    kp: float
    ki: float
    eom_range: float
    piezo_range: float
    integrator: float = 0.0

    @classmethod
    def from_params(cls, params):
        return cls(params.kp, params.ki, params.eom_range, params.piezo_range)


@dataclass(frozen=True)
class PICommand:
    phase: float
    frequency: float
    phase_saturated: bool
    frequency_saturated: bool

    @property
    def saturated(self):
        return self.phase_saturated or self.frequency_saturated


def pi_step(state, error):
    """Advance the controller by one update; mutates ``state.integrator``.

    Proportional → EOM phase (rad), integral → piezo frequency (Hz). Each
    output is clamped to its actuator range; the integrator freezes rather than
    winding further into a limit.
    """
    phase = state.kp * error
    phase_sat = abs(phase) > state.eom_range
    if phase_sat:
        phase = math.copysign(state.eom_range, phase)

    candidate = state.integrator + state.ki * error
    freq_sat = abs(candidate) > state.piezo_range
    if not freq_sat:
        state.integrator = candidate
    return PICommand(phase, state.integrator, phase_sat, freq_sat)


def _acquisition(trace, loop_rate, threshold=0.1, window=100):
    n = trace.size
    tail = trace[n - max(1, int(round(0.1 * n))):]
    acquired = bool(np.mean(np.abs(tail)) < threshold)
    w = min(window, n)
    smooth = np.convolve(np.abs(trace), np.ones(w) / w, mode="valid")
    bad = np.flatnonzero(smooth >= threshold)
    if bad.size == 0:
        t_acq = 0.0
    elif bad[-1] == smooth.size - 1:
        t_acq = math.nan
    else:
        t_acq = (bad[-1] + w) / loop_rate
    return acquired, (t_acq if acquired else math.nan)


def run_lock(params, duration, seed=None, disturbance=None):
    """Simulate the closed loop for ``duration`` seconds.

    ``disturbance`` (optional, rad, length n) is added to the plant phase; it is
    how tests inject phase slips or steps. The returned trace is the true
    LO-to-pilot phase error wrapped to (−π, π].
    """
    n = int(round(duration * params.loop_rate))
    if n < 10:
        raise ParameterError("duration × loop_rate must be >= 10")
    fs = params.loop_rate
    rng = np.random.default_rng(seed)
    src_rng, llo_rng, det_rng = rng.spawn(3)

    plant = (laser_phase_walk(params.linewidth_source, fs, n, src_rng)
             - laser_phase_walk(params.linewidth_llo, fs, n, llo_rng))
    plant += 2 * np.pi * params.clock_offset_hz * np.arange(n) / fs
    plant += params.initial_offset
    if disturbance is not None:
        plant += np.asarray(disturbance, dtype=float)
    if params.detector_phase_noise_floor > 0:
        det = det_rng.normal(0.0, params.detector_phase_noise_floor, n)
    else:
        det = np.zeros(n)

    state = PIState.from_params(params)
    alpha = 1.0 - math.exp(-2 * math.pi * params.piezo_bandwidth / fs)
    step = 2 * math.pi / fs
    eom_range = params.eom_range
    eom = 0.0
    pz_phase = 0.0
    pz_freq = 0.0
    two_pi = 2 * math.pi
    trace = np.empty(n)
    for k in range(n):
        err = plant[k] - eom - pz_phase
        err = math.pi - (math.pi - err) % two_pi
        trace[k] = err
        meas = err + det[k]
        meas = math.pi - (math.pi - meas) % two_pi
        cmd = pi_step(state, meas)
        eom = min(max(eom + cmd.phase, -eom_range), eom_range)
        pz_phase += step * pz_freq
        pz_freq += alpha * (cmd.frequency - pz_freq)

    locked = trace[n - int(round(0.8 * n)):]
    acquired, t_acq = _acquisition(trace, fs)
    return LockResult(trace, fs, float(np.std(locked)), float(np.mean(locked)),
                      acquired, t_acq)


def open_loop_response(params, freqs):
    """Open-loop gain C(z) of the linearised loop at ``freqs`` (Hz)."""
    fs = params.loop_rate
    z = np.exp(2j * np.pi * np.asarray(freqs, dtype=float) / fs)
    alpha = 1.0 - math.exp(-2 * math.pi * params.piezo_bandwidth / fs)
    c = 2 * math.pi / fs
    zi = 1.0 / z
    eom = params.kp * zi / (1.0 - zi)
    piezo = params.ki * alpha * c * zi ** 2 / ((1.0 - zi) ** 2 * (1.0 - (1.0 - alpha) * zi))
    return eom + piezo


def closed_loop_poles(params):
    """Poles of the linearised closed loop (roots of the characteristic polynomial)."""
    fs = params.loop_rate
    alpha = 1.0 - math.exp(-2 * math.pi * params.piezo_bandwidth / fs)
    c = 2 * math.pi / fs
    lag = [1.0, -(1.0 - alpha)]
    poly = np.polymul(np.polymul([1.0, -1.0], [1.0, -1.0]), lag)
    poly = np.polyadd(poly, params.kp * np.polymul([1.0, -1.0], lag))
    poly = np.polyadd(poly, [params.ki * alpha * c])
    return np.roots(poly)


def predicted_residual_sigma(params, n_grid=1 << 18):
    """Residual phase std of the linearised loop, from its noise transfer functions.

    Laser phase diffusion enters through the error transfer 1/(1+C) and the
    detector floor through C/(1+C). Valid while the loop is stable and
    unsaturated.
    """
    if np.max(np.abs(closed_loop_poles(params))) >= 1.0:
        return math.inf
    fs = params.loop_rate
    w = (np.arange(n_grid) + 0.5) * np.pi / n_grid
    c_ol = open_loop_response(params, w * fs / (2 * np.pi))
    zi = np.exp(-1j * w)
    q = 2 * math.pi * (params.linewidth_source + params.linewidth_llo) / fs
    laser = q * np.abs(1.0 / ((1.0 - zi) * (1.0 + c_ol))) ** 2
    det = params.detector_phase_noise_floor ** 2 * np.abs(c_ol / (1.0 + c_ol)) ** 2
    # midpoint rule over (0, π); the integrands are even in w.
    var = np.mean(laser + det)
    return math.sqrt(var)
