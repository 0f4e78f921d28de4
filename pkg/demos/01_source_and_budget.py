"""
Squeezed source and a loss budget
=================================

Closed-form quadrature spectra: pump a cavity squeezer, push the state through
fiber and component loss, smear it with residual LO phase noise, and watch the
squeezing erode stage by stage.
"""

import numpy as np

from sqzsim import (
    ChannelParams,
    OpoParams,
    PhaseNoiseModel,
    apply_loss,
    calibrate_pump,
    db,
    opo_spectrum,
    phase_noise_average,
    transmittance_of,
)
from sqzsim.scenarios import ScenarioConfig, noise_budget_report

# Pick the pump so the detected spectrum sits at -3.5 dB at 4 MHz.
# eta_total lumps escape, propagation and detector efficiency together.
x = calibrate_pump(-3.5, eta_total=0.7, gamma=50e6, f_eval=4e6)
source = OpoParams(pump_parameter=x, eta_total=0.7, cavity_hwhm=50e6)
print(f"pump parameter x = {x:.4f}")

freqs = np.array([0.5e6, 2e6, 4e6, 10e6, 50e6])
spec = opo_spectrum(source, freqs)
for f, vm, vp in zip(freqs, spec.v_minus, spec.v_plus):
    print(f"  {f / 1e6:5.1f} MHz  V- {db(vm):6.2f} dB   V+ {db(vp):6.2f} dB")

# 10 km of SMF at 0.18 dB/km, then lumped insertion loss
channel = ChannelParams(fiber_length=10, attenuation=0.18, wdm_insertion_loss=3.2)
eta = transmittance_of(channel)
lossy = apply_loss(spec, eta)
print(f"\nchannel transmittance {eta:.3f} ({channel.total_loss_db:.2f} dB)")
print(f"  squeezing at 4 MHz after loss: {db(lossy.at(4e6)[0]):.2f} dB")

# Phase jitter mixes a little anti-squeezing into the measured quadrature.
vm, vp = lossy.at(4e6)
for sigma in (0.0, 0.039, 0.1, 0.3):
    v = phase_noise_average(vm, vp, PhaseNoiseModel(0.0, sigma))
    print(f"  sigma {sigma:5.3f} rad -> {db(v):6.2f} dB")

# The same chain, itemised. Every stage is listed, fitted or not.
cfg = ScenarioConfig(opo=source, channel=channel, pin_sigma=0.039, mode="llo_10km")
print()
print(noise_budget_report(cfg).format())
