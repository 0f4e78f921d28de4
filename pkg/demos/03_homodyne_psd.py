"""
Homodyne records and their spectra
==================================

Turn a quadrature spectrum into a time series, then analyse it the way a
spectrum analyser would: Welch PSD, divided by a vacuum (shot-noise) record.
"""

import numpy as np

from sqzsim import HomodyneRecord, db, opo_spectrum
from sqzsim.homodyne import (
    band_noise_power,
    band_power_envelope,
    fit_phase_envelope,
    normalize_to_shot,
    pilot_phase_profile,
    synthesize_trace,
    welch_psd,
)
from sqzsim.scenarios import calibrated_source

fs = 20e6
grid = np.linspace(fs / 2 / 2048, fs / 2, 2048)
spec = opo_spectrum(calibrated_source(), grid)

# LO locked on the squeezed quadrature; electronic noise 20 dB below shot noise.
rec = synthesize_trace(spec, 0.0, fs, 2 ** 22, seed=1)
rel = normalize_to_shot(welch_psd(rec), welch_psd(rec.vacuum_record()))
print("squeezed quadrature, 200 kHz bands:")
for f in (1e6, 2e6, 4e6, 6e6):
    print(f"  {f / 1e6:.0f} MHz  {band_noise_power(rel, f, 200e3):6.2f} dB"
          f"   (model {db(spec.at(f)[0]):6.2f} dB)")

# Sweep the LO phase through 2π and fit the sinusoidal envelope.
n = 2 ** 22
theta = np.linspace(0, 2 * np.pi, n, endpoint=False)
scan = synthesize_trace(spec, theta, fs, n, seed=2)
t, p = band_power_envelope(scan, 4e6, 200e3, 128)
lo, hi, _ = fit_phase_envelope(2 * np.pi * t * fs / n, p)
print(f"\nscanned envelope at 4 MHz: {db(lo):.2f} dB ... {db(hi):+.2f} dB")

# Pilot-tone phase recovery: 40 MHz beat with a slow 0.05 rad wobble.
rate = 250e6
tt = np.arange(200_000) / rate
wobble = 0.05 * np.sin(2 * np.pi * 20e3 * tt)
beat = HomodyneRecord(np.cos(2 * np.pi * 40e6 * tt + 0.3 + wobble), rate)
phase = pilot_phase_profile(beat, 40e6)[20_000:-20_000]
print(f"\npilot phase: mean {np.mean(phase):.3f} rad, std {np.std(phase):.4f} rad "
      f"(injected 0.300, {np.std(wobble[20_000:-20_000]):.4f})")
