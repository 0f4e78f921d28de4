"""Gaussian-state model of an OPO squeezed-vacuum source and the link it traverses.

All variances are in shot-noise units: the vacuum has variance 1 in every
quadrature. Spectra are evaluated on caller-supplied frequency grids and never
resampled internally.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class ParameterError(ValueError):
    """A physical parameter lies outside its admissible domain."""


class InfeasibleError(ValueError):
    """A requested target cannot be reached with the given parameters.

    ``bound`` carries the best achievable value (same units as the target).
    """

    def __init__(self, message, bound=None):
        super().__init__(message)
        self.bound = bound


def db(v):
    """Linear variance ratio to decibels."""
    v = np.asarray(v, dtype=float)
    if np.any(v <= 0):
        raise ParameterError("dB conversion needs a strictly positive value")
    out = 10.0 * np.log10(v)
    return float(out) if out.ndim == 0 else out


def undb(level_db):
    """Decibels to linear variance ratio."""
    out = 10.0 ** (np.asarray(level_db, dtype=float) / 10.0)
    return float(out) if out.ndim == 0 else out


@dataclass(frozen=True)
class QuadratureSpectrum:
    """Squeezed / anti-squeezed quadrature variances versus sideband frequency."""

    freqs: np.ndarray
    v_minus: np.ndarray
    v_plus: np.ndarray

    def __post_init__(self):
        freqs = np.atleast_1d(np.asarray(self.freqs, dtype=float))
        vm = np.broadcast_to(np.asarray(self.v_minus, dtype=float), freqs.shape).copy()
        vp = np.broadcast_to(np.asarray(self.v_plus, dtype=float), freqs.shape).copy()
        if freqs.size == 0:
            raise ParameterError("spectrum needs at least one frequency")
        if np.any(freqs <= 0) or np.any(np.diff(freqs) <= 0):
            raise ParameterError("frequencies must be positive and strictly increasing")
        if np.any(vm <= 0) or np.any(vp <= 0):
            raise ParameterError("quadrature variances must be positive")
        for name, arr in (("freqs", freqs), ("v_minus", vm), ("v_plus", vp)):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @classmethod
    def vacuum(cls, freqs):
        freqs = np.asarray(freqs, dtype=float)
        return cls(freqs, np.ones_like(freqs), np.ones_like(freqs))

    def at(self, f):
        """Linearly interpolated (v_minus, v_plus) at frequency ``f``."""
        return (float(np.interp(f, self.freqs, self.v_minus)),
                float(np.interp(f, self.freqs, self.v_plus)))

    def variance(self, theta):
        """Quadrature variance measured at a fixed LO angle ``theta``."""
        c2 = np.cos(theta) ** 2
        return self.v_minus * c2 + self.v_plus * (1.0 - c2)


@dataclass(frozen=True)
class OpoParams:
    """Squeezer parameters.

    ``pump_parameter`` is sqrt(P/P_threshold). ``eta_total`` lumps escape,
    propagation to the detector, homodyne visibility and detector quantum
    efficiency. ``pilot_cnr`` is in dB within the demodulation bandwidth.
    """

    pump_parameter: float = 0.0
    eta_total: float = 0.7
    cavity_hwhm: float = 50e6
    pilot_freq: float = 40e6
    pilot_cnr: float = 40.0

    def __post_init__(self):
        if not 0.0 <= self.pump_parameter < 1.0:
            raise ParameterError(
                f"pump_parameter must satisfy 0 <= x < 1, got {self.pump_parameter}")
        if not 0.0 < self.eta_total <= 1.0:
            raise ParameterError(
                f"eta_total must satisfy 0 < eta <= 1, got {self.eta_total}")
        if self.cavity_hwhm <= 0:
            raise ParameterError("cavity_hwhm must be > 0")
        if self.pilot_freq <= 0:
            raise ParameterError("pilot_freq must be > 0")


@dataclass(frozen=True)
class ChannelParams:
    """Link losses (dB) and additive excess noise (shot-noise units).

    ``coexistence_loss`` holds any fitted extra loss attributed to sharing the
    fiber with the classical channel; it is kept separate so it shows up as its
    own line in noise budgets.
    """

    fiber_length: float = 0.0
    attenuation: float = 0.18
    wdm_insertion_loss: float = 0.0
    connector_loss: float = 0.0
    coexistence_loss: float = 0.0
    excess_noise: float = 0.0

    def __post_init__(self):
        for name in ("fiber_length", "attenuation", "wdm_insertion_loss",
                     "connector_loss", "coexistence_loss", "excess_noise"):
            if getattr(self, name) < 0:
                raise ParameterError(f"{name} must be >= 0")

    @property
    def fiber_loss_db(self):
        return self.fiber_length * self.attenuation

    @property
    def total_loss_db(self):
        return (self.fiber_loss_db + self.wdm_insertion_loss
                + self.connector_loss + self.coexistence_loss)


@dataclass(frozen=True)
class PhaseNoiseModel:
    mean_offset: float = 0.0
    sigma: float = 0.0

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError("phase-noise sigma must be >= 0")


def opo_spectrum(params, freqs):
    """Output quadrature spectrum of a below-threshold degenerate OPO.

    V∓(f) = 1 ∓ eta · 4x / ((1 ± x)² + (f/gamma)²)
    """
    freqs = np.atleast_1d(np.asarray(freqs, dtype=float))
    x = params.pump_parameter
    r2 = (freqs / params.cavity_hwhm) ** 2
    eta = params.eta_total
    # V− written without the 1 − (…) cancellation so it stays positive near threshold
    v_minus = ((1.0 - x) ** 2 + 4.0 * x * (1.0 - eta) + r2) / ((1.0 + x) ** 2 + r2)
    v_plus = 1.0 + eta * 4.0 * x / ((1.0 - x) ** 2 + r2)
    return QuadratureSpectrum(freqs, v_minus, v_plus)


def calibrate_pump(target_sq_db, eta_total, gamma, f_eval, tol=1e-9):
    """Pump parameter that makes the squeezed variance at ``f_eval`` hit ``target_sq_db``.

    Solved by bisection over x in [0, 1). Raises InfeasibleError when the
    target is deeper than the threshold limit for this efficiency.
    """
    if target_sq_db > 0:
        raise ParameterError("target squeezing must be <= 0 dB")
    if target_sq_db == 0:
        return 0.0
    if not 0.0 < eta_total <= 1.0:
        raise ParameterError("eta_total must satisfy 0 < eta <= 1")
    target = undb(target_sq_db)
    r2 = (f_eval / gamma) ** 2

    def v_minus(x):
        return 1.0 - eta_total * 4.0 * x / ((1.0 + x) ** 2 + r2)

    # V− decreases monotonically in x; its infimum is reached as x -> 1.
    floor = v_minus(1.0)
    if target <= floor:
        raise InfeasibleError(
            f"target {target_sq_db:.3f} dB is beyond the achievable bound "
            f"{db(floor):.3f} dB (eta_total={eta_total}, f/gamma={np.sqrt(r2):.3g})",
            bound=db(floor))
    lo, hi = 0.0, 1.0
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        if v_minus(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)


def transmittance_of(channel):
    """Power transmittance of the whole channel."""
    return float(10.0 ** (-channel.total_loss_db / 10.0))


def _check_eta(eta):
    if not 0.0 < eta <= 1.0:
        raise ParameterError(f"transmittance must satisfy 0 < eta <= 1, got {eta}")


def apply_loss(spec, eta):
    """Beam-splitter loss: each variance relaxes toward vacuum, V' = eta·V + 1 − eta."""
    _check_eta(eta)
    return QuadratureSpectrum(spec.freqs,
                              eta * spec.v_minus + (1.0 - eta),
                              eta * spec.v_plus + (1.0 - eta))


def add_excess_noise(spec, n_x):
    if n_x < 0:
        raise ParameterError("excess noise must be >= 0")
    return QuadratureSpectrum(spec.freqs, spec.v_minus + n_x, spec.v_plus + n_x)


def phase_noise_average(v_minus, v_plus, model):
    """Measured variance when the LO angle is Normal(mean_offset, sigma²).

    Closed form of E[V−cos²θ + V+sin²θ].
    """
    v_minus = np.asarray(v_minus, dtype=float)
    v_plus = np.asarray(v_plus, dtype=float)
    mean = 0.5 * (v_plus + v_minus)
    half = 0.5 * (v_plus - v_minus)
    out = mean - half * np.exp(-2.0 * model.sigma ** 2) * np.cos(2.0 * model.mean_offset)
    return float(out) if out.ndim == 0 else out

