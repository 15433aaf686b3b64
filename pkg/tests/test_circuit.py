import math
from dataclasses import replace

import numpy as np
import pytest
from scipy.integrate import solve_ivp

from pnrdet.circuit import (
    CircuitParams,
    amplitude_map,
    calibrate_hotspot_resistance,
    jitter_fwhm,
    recovery_time,
    simulate_pulse,
)
from pnrdet.errors import DomainError, StabilityError, ThresholdError

P = CircuitParams()
QUIET = replace(P, amplifier_noise_rms=0.0)


def test_no_events_no_output():
    trace = simulate_pulse(QUIET, [], seed=1)
    assert trace.samples.size == P.n_samples
    assert np.all(trace.samples == 0.0)


def test_single_pixel_amplitude_is_calibrated():
    amp = simulate_pulse(QUIET, [(0, 1e-9)]).peak_amplitude()
    assert amp == pytest.approx(16e-3, rel=0.10)


def test_peak_matches_ode_reference():
    # independent stiff integration of the same circuit equations
    p = replace(QUIET, n_pixels=4, trace_duration=3e-9)
    N, L, Rs, RL, Ib = 4, p.kinetic_inductance_per_pixel, p.shunt_resistance, p.load_resistance, p.bias_current
    t0, t1 = 1e-9, 1e-9 + p.hotspot_duration

    def rhs(t, i, hot):
        Ic = (RL * Ib + Rs * i.sum()) / (N * Rs + RL)
        R = np.zeros(N)
        R[list(hot)] = p.hotspot_resistance
        return (Rs * (Ic - i) - R * i) / L

    sol = solve_ivp(rhs, (t0, t1), np.full(N, Ib), args=((0, 2),), method="Radau", rtol=1e-10, atol=1e-16)
    Ic = (RL * Ib + Rs * sol.y[:, -1].sum()) / (N * Rs + RL)
    expected = p.gain * RL * (Ib - Ic)
    got = simulate_pulse(p, [(0, t0), (2, t0)]).peak_amplitude()
    assert got == pytest.approx(expected, rel=1e-6)


def test_linear_amplitude_map():
    amps = amplitude_map(QUIET, 32)
    assert amps.size == 32
    assert np.all(np.diff(amps) > 0)
    k = np.arange(1, 33)
    slope = amps @ k / (k @ k)
    assert np.max(np.abs(amps - slope * k) / (slope * k)) < 0.02
    assert 28 <= amps[-1] / amps[0] <= 32


def test_amplitude_map_single():
    amps = amplitude_map(QUIET, 1)
    assert amps.shape == (1,)
    assert amps[0] == pytest.approx(16e-3, rel=0.10)


def test_amplitude_map_bounds():
    with pytest.raises(DomainError):
        amplitude_map(QUIET, 33)


def test_noiseless_output_identical_across_seeds():
    a = simulate_pulse(P, [(3, 1e-9)], seed=1, noise=False)
    b = simulate_pulse(P, [(3, 1e-9)], seed=2, noise=False)
    np.testing.assert_array_equal(a.samples, b.samples)


def test_noisy_output_deterministic_for_seed():
    a = simulate_pulse(P, [(3, 1e-9)], seed=5)
    b = simulate_pulse(P, [(3, 1e-9)], seed=5)
    np.testing.assert_array_equal(a.samples, b.samples)
    residual = a.samples - simulate_pulse(P, [(3, 1e-9)], noise=False).samples
    assert residual.std() == pytest.approx(P.amplifier_noise_rms, rel=0.05)


def test_permutation_invariance():
    a = simulate_pulse(QUIET, [(0, 1e-9), (1, 1e-9), (2, 1e-9)]).peak_amplitude()
    b = simulate_pulse(QUIET, [(31, 1e-9), (7, 1e-9), (19, 1e-9)]).peak_amplitude()
    assert a == pytest.approx(b, rel=1e-12)


def test_current_bookkeeping():
    trace = simulate_pulse(QUIET, [(0, 1e-9), (5, 1e-9), (5, 3e-9), (9, 2e-9)], record_currents=True)
    total = trace.branch_currents + trace.shunt_currents
    err = np.abs(total - trace.chain_current[:, None]) / np.abs(trace.chain_current[:, None])
    assert err.max() < 1e-9


def test_convergence_under_grid_refinement():
    coarse = simulate_pulse(QUIET, [(0, 1e-9), (1, 1e-9)]).peak_amplitude()
    fine = simulate_pulse(replace(QUIET, sample_interval=P.sample_interval / 2), [(0, 1e-9), (1, 1e-9)]).peak_amplitude()
    assert abs(fine - coarse) / fine < 0.005


def test_retrapping_guard_blocks_refire():
    # second photon arrives while the branch current is still depressed
    trace = simulate_pulse(QUIET, [(0, 1e-9), (0, 1.5e-9)])
    assert len(trace.fired_events) == 1
    later = simulate_pulse(QUIET, [(0, 1e-9), (0, 30e-9)])
    assert len(later.fired_events) == 2
    strict = simulate_pulse(replace(QUIET, retrap_fraction=0.85), [(0, 1e-9), (0, 10e-9)])
    loose = simulate_pulse(replace(QUIET, retrap_fraction=0.1), [(0, 1e-9), (0, 10e-9)])
    assert len(strict.fired_events) == 1
    assert len(loose.fired_events) == 2


def test_stability_bound_is_named():
    coarse = replace(QUIET, sample_interval=1e-9, trace_duration=100e-9)
    with pytest.raises(StabilityError, match="L/\\(R_hotspot \\+ R_shunt\\)"):
        simulate_pulse(coarse, [(0, 1e-9)])


def test_bad_events():
    with pytest.raises(DomainError):
        simulate_pulse(QUIET, [(32, 1e-9)])
    with pytest.raises(DomainError):
        simulate_pulse(QUIET, [(0, 1.0)])


def test_params_validation():
    with pytest.raises(DomainError):
        CircuitParams(bias_current=20e-6)
    with pytest.raises(DomainError):
        CircuitParams(hotspot_resistance=30.0)
    with pytest.raises(DomainError):
        CircuitParams(trace_duration=1e-11)


def test_calibration_hits_target():
    p = replace(QUIET, hotspot_resistance=1000.0)
    cal = calibrate_hotspot_resistance(p, target_amplitude=16e-3)
    amp = simulate_pulse(cal, [(0, 1e-9)]).peak_amplitude()
    assert amp == pytest.approx(16e-3, rel=1e-4)
    assert cal.hotspot_resistance == pytest.approx(P.hotspot_resistance, rel=1e-3)


def test_calibration_unreachable():
    with pytest.raises(DomainError):
        calibrate_hotspot_resistance(QUIET, target_amplitude=10.0)


# -- jitter -------------------------------------------------------------------


def test_jitter_zero_noise():
    res = jitter_fwhm(QUIET, 1, n_trials=100)
    assert res.fwhm <= P.sample_interval


def test_jitter_ordering_small_sample():
    fw = [jitter_fwhm(P, n, n_trials=2000, seed=n).fwhm for n in (1, 2, 32)]
    assert fw[0] > fw[1] > fw[2] > 0


def test_jitter_scales_with_noise_in_linear_regime():
    # first-order regime: noise well below the per-sample rise of the edge
    a = jitter_fwhm(replace(P, amplifier_noise_rms=20e-6), 1, n_trials=10000, seed=1).fwhm
    b = jitter_fwhm(replace(P, amplifier_noise_rms=40e-6), 1, n_trials=10000, seed=2).fwhm
    assert b / a == pytest.approx(2.0, rel=0.10)


def test_jitter_matches_slew_rate_estimate():
    sigma = 20e-6
    p = replace(P, amplifier_noise_rms=sigma)
    res = jitter_fwhm(p, 1, n_trials=10000, seed=4, keep_times=True)
    clean = simulate_pulse(p, [(0, 1e-9)], noise=False).samples
    thr = 0.5 * clean.max()
    j = np.argmax(clean >= thr)
    dt = p.sample_interval
    slope = (clean[j] - clean[j - 1]) / dt
    frac = (thr - clean[j - 1]) / (clean[j] - clean[j - 1])
    # interpolated crossing mixes the noise of both bracketing samples
    sigma_t = sigma * math.sqrt(frac**2 + (1 - frac) ** 2) / slope
    assert res.fwhm == pytest.approx(2.3548 * sigma_t, rel=0.1)


def test_jitter_threshold_error():
    with pytest.raises(ThresholdError):
        # the trace stops one sample after arrival, so noise hides the edge in many trials
        jitter_fwhm(replace(P, trace_duration=1.01e-9), 1, n_trials=1000, threshold_fraction=0.99)


def test_jitter_argument_checks():
    with pytest.raises(DomainError):
        jitter_fwhm(P, 1, n_trials=10)
    with pytest.raises(DomainError):
        jitter_fwhm(P, 1, threshold_fraction=1.0)


# -- recovery ---------------------------------------------------------------------


def test_recovery_small_fraction_is_immediate():
    assert recovery_time(QUIET, 1e-6) == 0.0


def test_recovery_order_of_time_constant():
    t = recovery_time(QUIET, 0.9)
    ref = P.recovery_time_constant * math.log(10)
    assert 0.5 * ref < t < 2 * ref


def test_recovery_grows_with_inductance():
    big = calibrate_hotspot_resistance(replace(QUIET, kinetic_inductance_per_pixel=600e-9))
    assert recovery_time(big, 0.9) > recovery_time(QUIET, 0.9)
    assert recovery_time(replace(QUIET, kinetic_inductance_per_pixel=500e-9), 0.9) > recovery_time(QUIET, 0.9)


def test_recovery_must_finish_in_trace():
    with pytest.raises(DomainError):
        recovery_time(replace(QUIET, trace_duration=5e-9), 0.9)
