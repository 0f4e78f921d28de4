"""Balanced-homodyne record synthesis and the spectral / phase analysis applied to it.

Records are in shot-noise units: a vacuum record is white with unit variance,
so its one-sided PSD scaled by fs/2 is 1 at every frequency. ``PsdEstimate``
stores power on that scale.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np
from scipy import signal, stats

from .lockloop import ConfigurationError, iq_demodulate, phase_detect
from .sqzmodel import QuadratureSpectrum, db


@dataclass
class HomodyneRecord:
    samples: np.ndarray
    sample_rate: float
    lo_phase: np.ndarray | float = 0.0
    label: str = ""
    shot_noise: np.ndarray | None = None

    def __post_init__(self):
        self.samples = np.asarray(self.samples, dtype=float)
        if self.sample_rate <= 0:
            raise ConfigurationError("sample_rate must be > 0")
        if np.ndim(self.lo_phase) and np.size(self.lo_phase) != self.samples.size:
            raise ConfigurationError("lo_phase length must match the sample count")
        if self.shot_noise is not None and np.size(self.shot_noise) != self.samples.size:
            raise ConfigurationError("shot-noise trace length must match the sample count")

    def __len__(self):
        return self.samples.size

    def vacuum_record(self):
        if self.shot_noise is None:
            raise ConfigurationError(f"record {self.label!r} carries no shot-noise trace")
        return HomodyneRecord(self.shot_noise, self.sample_rate, 0.0, self.label + ":vacuum")


@dataclass(frozen=True)
class PsdEstimate:
    freqs: np.ndarray
    power: np.ndarray
    resolution_bandwidth: float

    @property
    def power_db(self):
        return db(self.power)


@dataclass(frozen=True)
class PhaseHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    fit_mean: float
    fit_sigma: float
    chi2: float = math.nan
    dof: int = 0
    p_value: float = math.nan

    @property
    def bin_centers(self):
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def goodness_defined(self):
        return not math.isnan(self.p_value)

    def is_gaussian(self, level=0.01):
        """Fails to reject normality at significance ``level``."""
        return self.goodness_defined and self.p_value > level


def shaping_filter(freqs, variance, sample_rate, numtaps=257):
    """Linear-phase FIR whose power response follows ``variance`` (frequency sampling)."""
    nyq = sample_rate / 2
    grid = np.linspace(0.0, nyq, 2049)
    gain = np.sqrt(np.interp(grid, freqs, variance))
    return signal.firwin2(numtaps, grid, gain, fs=sample_rate)


def synthesize_trace(spec, lo_phase, sample_rate, n, electronic_clearance_db=20.0,
                     seed=None, numtaps=257, label="", with_shot_noise=True):
    """Quadrature record x = cosθ·x− + sinθ·x+ + e.

    x∓ are independent Gaussian processes with PSDs V∓(f), obtained by FIR
    shaping of white noise; e is white electronic noise ``electronic_clearance_db``
    below shot noise (``None`` disables it). With ``with_shot_noise`` a vacuum
    calibration trace with the same electronic noise is attached.
    """
    if spec.freqs[-1] < sample_rate / 2 * (1 - 1e-9):
        raise ConfigurationError(
            f"spectrum ends at {spec.freqs[-1]:g} Hz, below Nyquist {sample_rate / 2:g} Hz")
    if n < numtaps:
        raise ConfigurationError(f"record length {n} is shorter than the {numtaps}-tap filter")
    theta = np.asarray(lo_phase, dtype=float)
    if theta.ndim and theta.size != n:
        raise ConfigurationError("lo_phase length must match n")

    rng = np.random.default_rng(seed)
    rng_m, rng_p, rng_e, rng_v, rng_ve = rng.spawn(5)
    pad = numtaps - 1

    def coloured(variance, gen):
        h = shaping_filter(spec.freqs, variance, sample_rate, numtaps)
        return signal.oaconvolve(gen.standard_normal(n + pad), h, mode="valid")

    x = np.cos(theta) * coloured(spec.v_minus, rng_m) + np.sin(theta) * coloured(spec.v_plus, rng_p)
    e_std = 0.0 if electronic_clearance_db is None else 10 ** (-electronic_clearance_db / 20)
    if e_std:
        x += e_std * rng_e.standard_normal(n)
    shot = None
    if with_shot_noise:
        shot = rng_v.standard_normal(n)
        if e_std:
            shot += e_std * rng_ve.standard_normal(n)
    return HomodyneRecord(x, sample_rate, theta if theta.ndim else float(theta), label, shot)


def welch_psd(record, segment_len=2 ** 14, overlap_fraction=0.5, window="hann"):
    """Welch averaged periodogram on the shot-noise-relative scale.

    DC and Nyquist bins are dropped. ``resolution_bandwidth`` is the window's
    equivalent noise bandwidth.
    """
    x = record.samples if isinstance(record, HomodyneRecord) else np.asarray(record, float)
    fs = record.sample_rate if isinstance(record, HomodyneRecord) else None
    if fs is None:
        raise ConfigurationError("welch_psd needs a HomodyneRecord (sample rate unknown)")
    if not 0.0 <= overlap_fraction < 1.0:
        raise ConfigurationError("overlap_fraction must lie in [0, 1)")
    if segment_len < 4 or segment_len > x.size:
        raise ConfigurationError(
            f"segment length {segment_len} incompatible with record of {x.size} samples")
    noverlap = int(segment_len * overlap_fraction)
    if noverlap >= segment_len:
        raise ConfigurationError("overlap leaves no step between segments")
    f, pxx = signal.welch(x, fs=fs, window=window, nperseg=segment_len,
                          noverlap=noverlap, scaling="density")
    win = signal.get_window(window, segment_len)
    enbw = fs * np.sum(win ** 2) / np.sum(win) ** 2
    keep = slice(1, -1) if segment_len % 2 == 0 else slice(1, None)
    return PsdEstimate(f[keep], pxx[keep] * fs / 2, float(enbw))


def normalize_to_shot(psd_signal, psd_vacuum):
    """Per-bin ratio of a signal PSD to a vacuum calibration PSD."""
    if not np.array_equal(psd_signal.freqs, psd_vacuum.freqs):
        raise ConfigurationError("signal and vacuum PSDs are on different frequency grids")
    return PsdEstimate(psd_signal.freqs, psd_signal.power / psd_vacuum.power,
                       psd_signal.resolution_bandwidth)


def band_noise_power(psd, f_center, rbw):
    """Mean power over [f_center − rbw/2, f_center + rbw/2], in dB."""
    lo, hi = f_center - rbw / 2, f_center + rbw / 2
    if lo < psd.freqs[0] or hi > psd.freqs[-1]:
        raise ConfigurationError(
            f"band [{lo:g}, {hi:g}] Hz outside PSD grid [{psd.freqs[0]:g}, {psd.freqs[-1]:g}] Hz")
    sel = (psd.freqs >= lo) & (psd.freqs <= hi)
    if not np.any(sel):
        raise ConfigurationError("band contains no PSD bins; widen rbw")
    return db(np.mean(psd.power[sel]))


def band_power_envelope(record, f_center, rbw, n_blocks, segment_len=2 ** 12):
    """Band power at ``f_center`` in consecutive blocks of the record.

    Returns (block-centre times, linear shot-relative power). Normalised to the
    record's shot-noise trace when one is attached.
    """
    n = len(record)
    block = n // n_blocks
    if block < segment_len:
        raise ConfigurationError("blocks shorter than one Welch segment")
    ref = None
    if record.shot_noise is not None:
        ref = welch_psd(record.vacuum_record(), segment_len)
    times = np.empty(n_blocks)
    power = np.empty(n_blocks)
    for b in range(n_blocks):
        sl = slice(b * block, (b + 1) * block)
        psd = welch_psd(HomodyneRecord(record.samples[sl], record.sample_rate), segment_len)
        if ref is not None:
            psd = normalize_to_shot(psd, ref)
        times[b] = (b * block + block / 2) / record.sample_rate
        power[b] = 10 ** (band_noise_power(psd, f_center, rbw) / 10)
    return times, power


def fit_phase_envelope(theta, power, passes=2):
    """Least-squares fit of P(θ) = a + b·cos2θ + c·sin2θ.

    Averaged periodogram power scatters in proportion to its mean, so after the
    first unweighted pass each point is reweighted by 1/P̂(θ)². Returns
    (minimum, maximum, angle of minimum) of the fitted curve.
    """
    theta = np.asarray(theta, dtype=float)
    power = np.asarray(power, dtype=float)
    basis = np.column_stack([np.ones_like(theta), np.cos(2 * theta), np.sin(2 * theta)])
    w = np.ones_like(power)
    for _ in range(max(1, passes)):
        (a, b, c), *_ = np.linalg.lstsq(basis * w[:, None], power * w, rcond=None)
        fitted = basis @ np.array([a, b, c])
        if np.any(fitted <= 0):
            break
        w = 1.0 / fitted
    amp = math.hypot(b, c)
    theta_min = 0.5 * math.atan2(-c, -b)
    return a - amp, a + amp, theta_min


def pilot_phase_profile(beat, f_pilot, sample_rate=None, lpf_cutoff=1e6):
    """Unwrapped phase of the pilot tone in a beat record, one value per sample."""
    if isinstance(beat, HomodyneRecord):
        sample_rate = beat.sample_rate if sample_rate is None else sample_rate
        beat = beat.samples
    if sample_rate is None:
        raise ConfigurationError("sample_rate is required for a bare array")
    i, q = iq_demodulate(beat, f_pilot, sample_rate, lpf_cutoff)
    return np.unwrap(phase_detect(i, q))


def phase_histogram_fit(trajectory, bin_count=None, min_expected=5.0):
    """Histogram a phase trajectory and fit a Gaussian by moments.

    Bins default to the Freedman–Diaconis rule over a range symmetric about the
    mean. Goodness of fit is a chi-square test against the fitted normal, with
    sparse tail bins merged until each expects ``min_expected`` counts.
    """
    x = np.asarray(trajectory, dtype=float)
    if x.size < 100:
        raise ValueError("need at least 100 phase samples")
    mean = float(np.mean(x))
    sigma = float(np.std(x))
    # widened a hair so rounding in mean ± half cannot drop the extreme samples
    half = float(np.max(np.abs(x - mean))) * (1 + 1e-9)
    if sigma == 0.0 or half == 0.0:
        edges = np.array([mean - 0.5, mean + 0.5])
        return PhaseHistogram(edges, np.array([x.size]), mean, 0.0)
    if bin_count is None:
        bin_count = max(1, len(np.histogram_bin_edges(x, bins="fd")) - 1)
    counts, edges = np.histogram(x, bins=bin_count, range=(mean - half, mean + half))

    cdf = stats.norm.cdf(edges, mean, sigma)
    cdf[0], cdf[-1] = 0.0, 1.0
    expected = x.size * np.diff(cdf)
    obs_m, exp_m = _merge_sparse(counts.astype(float), expected, min_expected)
    dof = obs_m.size - 3
    if dof < 1:
        return PhaseHistogram(edges, counts, mean, sigma)
    chi2 = float(np.sum((obs_m - exp_m) ** 2 / exp_m))
    return PhaseHistogram(edges, counts, mean, sigma, chi2, dof, float(stats.chi2.sf(chi2, dof)))


def _merge_sparse(obs, exp, min_expected):
    out_o, out_e = [], []
    acc_o = acc_e = 0.0
    for o, e in zip(obs, exp):
        acc_o += o
        acc_e += e
        if acc_e >= min_expected:
            out_o.append(acc_o)
            out_e.append(acc_e)
            acc_o = acc_e = 0.0
    if acc_e > 0 and out_e:
        out_o[-1] += acc_o
        out_e[-1] += acc_e
    return np.array(out_o), np.array(out_e)


def write_psd_csv(psd, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["freq_hz", "power_rel_linear", "power_rel_db"])
        for f, p in zip(psd.freqs, psd.power):
            w.writerow([f"{f:.6f}", f"{p:.9e}", f"{10 * math.log10(p):.6f}"])


def write_histogram_csv(hist, path):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_center_rad", "count"])
        for c, n in zip(hist.bin_centers, hist.counts):
            w.writerow([f"{c:.9e}", int(n)])


def vacuum_spectrum(sample_rate, n_points=512):
    """Flat unit spectrum reaching Nyquist, handy for calibration traces."""
    return QuadratureSpectrum.vacuum(np.linspace(sample_rate / 2 / n_points, sample_rate / 2, n_points))
