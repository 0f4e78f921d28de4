import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from sqzsim.lockloop import (
    ConfigurationError,
    LockParams,
    PIState,
    UndefinedPhaseError,
    closed_loop_poles,
    gains_for_bandwidth,
    iq_demodulate,
    laser_phase_walk,
    phase_detect,
    phase_floor_from_cnr,
    pi_step,
    predicted_residual_sigma,
    run_lock,
    wrap_phase,
)
from sqzsim.sqzmodel import ParameterError


class TestLaserPhaseWalk:
    def test_zero_linewidth(self):
        np.testing.assert_array_equal(laser_phase_walk(0.0, 1e6, 100, seed=1), 0.0)

    def test_starts_at_zero_and_deterministic(self):
        a = laser_phase_walk(100.0, 1e6, 1000, seed=5)
        b = laser_phase_walk(100.0, 1e6, 1000, seed=5)
        assert a[0] == 0.0
        np.testing.assert_array_equal(a, b)

    def test_increment_std(self):
        walk = laser_phase_walk(100.0, 1e6, 10 ** 6, seed=2)
        # sqrt(2π·100 / 1e6)
        assert np.std(np.diff(walk)) == pytest.approx(0.02507, rel=5e-3)

    def test_ensemble_variance_growth(self):
        lw, fs, n = 1e3, 1e5, 200
        walks = np.array([laser_phase_walk(lw, fs, n, seed=s) for s in range(1000)])
        t = np.arange(n) / fs
        var = walks.var(axis=0)
        expected = 2 * np.pi * lw * t
        np.testing.assert_allclose(var[50:], expected[50:], rtol=0.10)
        # late-time average is far tighter than the per-sample tolerance
        assert np.mean(var[-20:]) / np.mean(expected[-20:]) == pytest.approx(1.0, abs=0.05)

    def test_bad_args(self):
        with pytest.raises(ParameterError):
            laser_phase_walk(1.0, 0.0, 10)
        with pytest.raises(ParameterError):
            laser_phase_walk(1.0, 1e6, 0)


class TestIqDemodulate:
    fs = 250e6
    f0 = 40e6

    def tone(self, phase, n=50_000, df=0.0):
        t = np.arange(n) / self.fs
        return np.cos(2 * np.pi * (self.f0 + df) * t + phase)

    def test_in_phase_reference(self):
        i, q = iq_demodulate(self.tone(0.0), self.f0, self.fs, 1e6)
        mid = slice(10_000, -10_000)
        assert np.mean(i[mid]) == pytest.approx(0.5, abs=1e-3)
        assert np.max(np.abs(q[mid])) < 1e-3

    @pytest.mark.parametrize("phi", [-3.0, -1.2, 0.0, 0.7, 2.9])
    def test_phase_recovery(self, phi):
        i, q = iq_demodulate(self.tone(phi), self.f0, self.fs, 1e6)
        mid = slice(10_000, -10_000)
        err = wrap_phase(phase_detect(i[mid], q[mid]) - phi)
        assert np.max(np.abs(err)) < 1e-3

    def test_frequency_offset_slope(self):
        df = 20e3
        i, q = iq_demodulate(self.tone(0.0, n=200_000, df=df), self.f0, self.fs, 1e6)
        phase = np.unwrap(phase_detect(i, q))[20_000:-20_000]
        t = np.arange(phase.size) / self.fs
        slope = np.polyfit(t, phase, 1)[0]
        assert slope == pytest.approx(2 * np.pi * df, rel=1e-3)

    def test_cnr_to_phase_noise(self):
        cnr_db, cutoff = 40.0, 1e6
        n = 400_000
        rng = np.random.default_rng(3)
        carrier = 0.5
        n0 = carrier / (10 ** (cnr_db / 10) * cutoff)  # one-sided PSD
        noise = rng.normal(0, math.sqrt(n0 * self.fs / 2), n)
        i, q = iq_demodulate(self.tone(0.0, n=n) + noise, self.f0, self.fs, cutoff)
        phase = phase_detect(i, q)[20_000:-20_000]
        assert np.std(phase) == pytest.approx(phase_floor_from_cnr(cnr_db), rel=0.2)
        assert phase_floor_from_cnr(40.0) == pytest.approx(0.01)

    def test_aliasing_rejected(self):
        with pytest.raises(ConfigurationError):
            iq_demodulate(np.zeros(100), 40e6, 60e6, 1e6)
        with pytest.raises(ConfigurationError):
            iq_demodulate(np.zeros(100), 40e6, 250e6, 50e6)


class TestPhaseDetect:
    @pytest.mark.parametrize("i,q,expected", [
        (1, 0, 0.0), (0, 1, math.pi / 2), (-0.5, -0.5, -3 * math.pi / 4), (-1, 0, math.pi)])
    def test_quadrants(self, i, q, expected):
        assert phase_detect(i, q) == pytest.approx(expected)

    def test_undefined(self):
        with pytest.raises(UndefinedPhaseError):
            phase_detect(0.0, 0.0)

    @given(st.floats(-1e3, 1e3), st.floats(-1e3, 1e3))
    def test_range(self, i, q):
        if i == 0 and q == 0:
            return
        theta = phase_detect(i, q)
        assert -math.pi < theta <= math.pi

    @given(st.floats(-100, 100))
    def test_wrap_range(self, phi):
        w = wrap_phase(phi)
        assert -math.pi < w <= math.pi
        assert math.isclose(math.cos(w), math.cos(phi), abs_tol=1e-9)


class TestPiStep:
    def test_proportional_only(self):
        st_ = PIState(kp=0.8, ki=0.0, eom_range=10, piezo_range=1e6)
        cmd = pi_step(st_, 0.2)
        assert cmd.phase == pytest.approx(0.16)
        assert cmd.frequency == 0.0
        assert not cmd.saturated

    def test_integrator_accumulates(self):
        st_ = PIState(kp=0.0, ki=3.0, eom_range=10, piezo_range=1e6)
        for _ in range(25):
            cmd = pi_step(st_, 0.1)
        assert cmd.frequency == pytest.approx(25 * 3.0 * 0.1)

    def test_phase_clamp(self):
        st_ = PIState(kp=2.0, ki=0.0, eom_range=1.0, piezo_range=1e6)
        cmd = pi_step(st_, 0.6)
        assert cmd.phase == 1.0 and cmd.phase_saturated
        cmd = pi_step(st_, -0.6)
        assert cmd.phase == -1.0

    def test_anti_windup_freezes(self):
        st_ = PIState(kp=0.0, ki=1.0, eom_range=1.0, piezo_range=2.5)
        for _ in range(10):
            cmd = pi_step(st_, 1.0)
        assert st_.integrator == 2.0
        assert cmd.frequency_saturated
        # integrator leaves the limit immediately when the error reverses
        cmd = pi_step(st_, -1.0)
        assert cmd.frequency == 1.0 and not cmd.frequency_saturated


class TestGains:
    def test_unity_gain_of_eom_branch(self):
        kp, ki = gains_for_bandwidth(200e3, 1e6)
        w = 2 * np.pi * 200e3 / 1e6
        assert abs(kp / (np.exp(1j * w) - 1)) == pytest.approx(1.0)
        assert ki == pytest.approx(kp * 20e3)

    def test_default_loop_stable(self):
        assert np.max(np.abs(closed_loop_poles(LockParams()))) < 1.0

    def test_bad_bandwidth(self):
        with pytest.raises(ParameterError):
            gains_for_bandwidth(600e3, 1e6)


REF_LOCK = LockParams.for_bandwidth(200e3, linewidth_source=100.0, linewidth_llo=100.0)


class TestRunLock:
    def test_noiseless_convergence(self):
        p = replace(REF_LOCK.noiseless(), initial_offset=0.5)
        res = run_lock(p, 2e-3, seed=0)
        assert res.phase_error_trace[0] == pytest.approx(0.5)
        assert abs(res.phase_error_trace[-1]) < 1e-3
        assert res.acquired

    def test_determinism(self):
        a = run_lock(REF_LOCK, 0.01, seed=11)
        b = run_lock(REF_LOCK, 0.01, seed=11)
        np.testing.assert_array_equal(a.phase_error_trace, b.phase_error_trace)
        assert a.residual_sigma == b.residual_sigma
        c = run_lock(REF_LOCK, 0.01, seed=12)
        assert not np.array_equal(a.phase_error_trace, c.phase_error_trace)

    def test_trace_length(self):
        res = run_lock(REF_LOCK, 0.0123, seed=0)
        assert res.phase_error_trace.size == 12300
        assert res.locked_segment().size == round(0.8 * 12300)

    def test_too_short(self):
        with pytest.raises(ParameterError):
            run_lock(REF_LOCK, 5e-6)

    def test_100hz_linewidths_residual(self):
        res = run_lock(REF_LOCK, 0.1, seed=4)
        assert res.acquired
        assert res.residual_sigma <= 0.05

    @pytest.mark.parametrize("floor", [0.0, 0.01, 0.03])
    def test_matches_linear_prediction(self, floor):
        p = replace(REF_LOCK, detector_phase_noise_floor=floor)
        res = run_lock(p, 0.1, seed=8)
        assert res.residual_sigma == pytest.approx(predicted_residual_sigma(p), rel=0.05)

    def test_first_order_analytic(self):
        # ki = 0: e[k] = (1 − kp) e[k−1] + w[k] → var = q / (kp (2 − kp))
        kp = 0.5
        p = replace(REF_LOCK, kp=kp, ki=0.0, detector_phase_noise_floor=0.0, eom_range=1e6)
        q = 2 * np.pi * 200.0 / p.loop_rate
        expected = math.sqrt(q / (kp * (2 - kp)))
        assert predicted_residual_sigma(p) == pytest.approx(expected, rel=1e-3)
        assert run_lock(p, 0.1, seed=1).residual_sigma == pytest.approx(expected, rel=0.05)

    def test_gain_ladder(self):
        sigmas = []
        for ugb in (12.5e3, 25e3, 50e3, 100e3):
            p = LockParams.for_bandwidth(ugb, detector_phase_noise_floor=0.0,
                                         linewidth_source=1e3, linewidth_llo=1e3)
            sigmas.append(run_lock(p, 0.05, seed=3).residual_sigma)
        assert np.all(np.diff(sigmas) < 0)

    def test_clock_offset_needs_integrator(self):
        base = replace(REF_LOCK, clock_offset_ppm=1.0, eom_range=math.pi)
        assert base.clock_offset_hz == pytest.approx(40.0)
        # without the integrator the EOM alone must follow the 40 Hz ramp; it hits
        # its range after π/(2π·40 Hz) = 12.5 ms and the error then ramps until a
        # slip. The final-10% window (50 ms) spans at least one such episode.
        type1 = run_lock(replace(base, ki=0.0), 0.5, seed=2)
        type2 = run_lock(base, 0.5, seed=2)
        assert not type1.acquired
        assert type2.acquired
        assert type2.residual_sigma < 0.05
        assert abs(type2.residual_mean) < 0.01

    def test_phase_slip_reacquires(self):
        n = 20_000
        slip = np.where(np.arange(n) >= n // 2, 2 * np.pi, 0.0)
        res = run_lock(REF_LOCK, n / REF_LOCK.loop_rate, seed=6, disturbance=slip)
        assert res.acquired
        assert np.max(np.abs(res.phase_error_trace[n // 2 + 50:])) < 0.25

    def test_large_step_reacquires(self):
        n = 20_000
        step = np.where(np.arange(n) >= n // 2, 2.5, 0.0)
        res = run_lock(REF_LOCK, n / REF_LOCK.loop_rate, seed=6, disturbance=step)
        assert res.acquired
        tail = res.phase_error_trace[n // 2 + 200:]
        assert np.mean(np.abs(tail)) < 0.1

    def test_anti_windup_recovery(self):
        n = 20_000
        fs = REF_LOCK.loop_rate
        t = np.arange(n) / fs
        on, off = 2_000, 6_000

        def freq_step(df):
            f = np.where((np.arange(n) >= on) & (np.arange(n) < off), df, 0.0)
            return 2 * np.pi * np.cumsum(f) / fs

        base = replace(REF_LOCK.noiseless(), eom_range=1e3)
        free = run_lock(replace(base, piezo_range=1e6), t[-1], disturbance=freq_step(1e3)[:-1])
        unsat_peak = np.max(np.abs(free.phase_error_trace[on:off]))

        clamped = run_lock(replace(base, piezo_range=300.0), t[-1], disturbance=freq_step(1e3)[:-1])
        recovery = clamped.phase_error_trace[off:]
        assert np.max(np.abs(recovery)) <= 2 * unsat_peak
        assert abs(clamped.phase_error_trace[-1]) < 1e-3

    def test_divergence_is_reported_not_raised(self):
        p = replace(REF_LOCK, kp=0.0, ki=0.0)
        res = run_lock(p, 0.05, seed=1)
        assert not res.acquired
        assert math.isnan(res.acquisition_time)

    def test_trace_dump(self, tmp_path):
        res = run_lock(REF_LOCK, 1e-4, seed=0)
        path = tmp_path / "trace.txt"
        res.write_trace(path)
        data = np.loadtxt(path)
        assert data.shape == (100, 2)
        np.testing.assert_allclose(data[:, 0], np.arange(100) / 1e6, atol=1e-12)
        np.testing.assert_allclose(data[:, 1], res.phase_error_trace, rtol=1e-8)
