import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy.optimize import brentq
from scipy.special import erf

from pnrdet.circuit import CircuitParams, amplitude_map
from pnrdet.errors import DomainError, FitError
from pnrdet.readout import (
    AmplitudeHistogram,
    GaussianMixture,
    ThresholdStaircase,
    VoltageBlocks,
    assign_photon_numbers,
    assignment_probability,
    build_histogram,
    fit_gaussian_mixture,
    resolvable_peak_count,
    sample_amplitudes,
    select_component_count,
    staircase_from_amplitudes,
    staircase_to_distribution,
    voltage_blocks,
)
from pnrdet.statistics import DetectorArrayConfig, sample_click_dataset

mV = 1e-3
AMPS = amplitude_map(CircuitParams(amplifier_noise_rms=0.0), 32)


# -- histogram ---------------------------------------------------------------------


def test_histogram_single_value():
    h = build_histogram([1.0, 1.0, 1.0], 2)
    assert sorted(h.counts.tolist()) == [0, 3]
    assert h.total_events == 3


def test_histogram_mean():
    a = np.random.default_rng(0).normal(16 * mV, 3 * mV, 100_000)
    h = build_histogram(a, 100)
    assert h.mean() == pytest.approx(16 * mV, abs=0.1 * mV)
    # outer bins are centred on the extremes
    assert h.centers[0] == pytest.approx(a.min())
    assert h.centers[-1] == pytest.approx(a.max())


@given(st.lists(st.floats(-1, 1), min_size=1, max_size=200), st.integers(2, 50))
def test_histogram_conserves_events(a, n_bins):
    h = build_histogram(a, n_bins)
    assert h.total_events == len(a)
    assert h.counts.sum() == len(a)
    assert h.counts.size == n_bins


def test_histogram_errors():
    with pytest.raises(DomainError):
        build_histogram([], 10)
    with pytest.raises(DomainError):
        build_histogram([1.0], 1)
    with pytest.raises(DomainError):
        AmplitudeHistogram(np.array([0.0, 1.0]), np.array([2.0]), 3)


# -- mixture fit -------------------------------------------------------------------


def test_mixture_recovers_known_peaks():
    rng = np.random.default_rng(1)
    n = np.repeat(np.arange(1, 7), 100_000 // 6)
    a = 16 * mV * n + rng.normal(0, 3 * mV, n.size)
    g = fit_gaussian_mixture(build_histogram(a, 100), 6, 16 * mV)
    np.testing.assert_allclose(g.means, 16 * mV * np.arange(1, 7), atol=0.3 * mV)
    np.testing.assert_allclose(g.weights, 1 / 6, atol=0.02)
    np.testing.assert_allclose(g.sigmas, 3 * mV, rtol=0.1)


def test_single_component_matches_moments():
    a = np.random.default_rng(2).normal(20 * mV, 2 * mV, 50_000)
    g = fit_gaussian_mixture(build_histogram(a, 200), 1, 20 * mV)
    assert g.means[0] == pytest.approx(a.mean(), rel=0.01)
    assert g.sigmas[0] == pytest.approx(a.std(), rel=0.01)
    assert g.weights[0] == pytest.approx(1.0)


def test_collapsed_component_raises():
    a = np.concatenate([np.full(1000, 16 * mV), np.random.default_rng(3).normal(48 * mV, 3 * mV, 1000)])
    with pytest.raises(FitError, match="fewer"):
        fit_gaussian_mixture(build_histogram(a, 100), 3, 16 * mV)


def test_mixture_validation():
    with pytest.raises(DomainError):
        GaussianMixture([2.0, 1.0], [1.0, 1.0], [0.5, 0.5])
    with pytest.raises(DomainError):
        GaussianMixture([1.0, 2.0], [1.0, 1.0], [0.5, 0.6])
    with pytest.raises(DomainError):
        fit_gaussian_mixture(build_histogram([1.0, 2.0], 2), 0, 1.0)


def test_pipeline_histogram_resolves_eight_peaks():
    data = sample_click_dataset(DetectorArrayConfig(), 5.0, 100_000, seed=11)
    a = sample_amplitudes(AMPS, data.clicked_pixels, 3 * mV, np.random.default_rng(11))
    g = select_component_count(build_histogram(a, 100), 16 * mV)
    assert resolvable_peak_count(g) == g.k
    assert g.k >= 8


def test_resolvable_count_stops_at_merged_pair():
    g = GaussianMixture([16 * mV, 32 * mV, 36 * mV], [3 * mV] * 3, [1 / 3] * 3)
    assert resolvable_peak_count(g) == 2


# -- blocks and assignment ---------------------------------------------------------


def test_blocks_are_midpoints():
    g = GaussianMixture([16 * mV, 32 * mV, 48 * mV], [3 * mV] * 3, [1 / 3] * 3)
    b = voltage_blocks(g)
    np.testing.assert_allclose(b.boundaries, [8 * mV, 24 * mV, 40 * mV])
    single = voltage_blocks(GaussianMixture([16 * mV], [3 * mV], [1.0]), zero_boundary=5 * mV)
    np.testing.assert_allclose(single.boundaries, [5 * mV])


def test_midpoint_is_equal_posterior_point():
    g = GaussianMixture([16 * mV, 32 * mV], [3 * mV] * 2, [0.5, 0.5])
    diff = lambda v: np.exp(-0.5 * ((v - 16 * mV) / (3 * mV)) ** 2) - np.exp(-0.5 * ((v - 32 * mV) / (3 * mV)) ** 2)
    cross = brentq(diff, 17 * mV, 31 * mV, xtol=1e-15)
    assert voltage_blocks(g).boundaries[1] == pytest.approx(cross, abs=1e-12)


def test_zero_boundary_must_sit_below_first_peak():
    g = GaussianMixture([16 * mV], [3 * mV], [1.0])
    with pytest.raises(DomainError):
        voltage_blocks(g, zero_boundary=16 * mV)


def test_blocks_extension():
    b = VoltageBlocks([8 * mV, 24 * mV, 40 * mV]).extended(5)
    np.testing.assert_allclose(b.boundaries / mV, [8, 24, 40, 56, 72])
    assert VoltageBlocks([8 * mV]).extended(5).n_max == 1


def test_assignment_probability_constant_sigma():
    k = np.arange(1, 7)
    g = GaussianMixture(16 * mV * k, np.full(6, 3 * mV), np.full(6, 1 / 6))
    p = assignment_probability(g, voltage_blocks(g))
    np.testing.assert_allclose(p[:-1], erf(8 / 3 / np.sqrt(2)), rtol=1e-12)
    assert p[0] == pytest.approx(0.9923, abs=1e-4)


def test_assignment_probability_narrow_peaks():
    k = np.arange(1, 7)
    g = GaussianMixture(16 * mV * k, np.full(6, 1e-9), np.full(6, 1 / 6))
    np.testing.assert_allclose(assignment_probability(g, voltage_blocks(g)), 1.0)


def test_assignment_probability_sqrt_growth_decreases():
    k = np.arange(1, 8)
    g = GaussianMixture(16 * mV * k, 3 * mV * np.sqrt(k), np.full(7, 1 / 7))
    p = assignment_probability(g, voltage_blocks(g))[:6]
    assert np.all(np.diff(p) < 0)
    assert np.all(p[:2] >= 0.94)


@pytest.mark.parametrize("seed", [0, 1, 2])
def test_assignment_probability_matches_erf(seed):
    rng = np.random.default_rng(seed)
    k = rng.integers(1, 8)
    means = np.cumsum(rng.uniform(5, 20, k)) * mV
    sig = rng.uniform(1, 5, k) * mV
    g = GaussianMixture(means, sig, np.full(k, 1 / k))
    b = voltage_blocks(g)
    hi = np.append(b.boundaries[1:], np.inf)
    cdf = lambda v, m, s: 0.5 * (1 + erf((v - m) / (s * np.sqrt(2))))
    np.testing.assert_allclose(assignment_probability(g, b), cdf(hi, means, sig) - cdf(b.boundaries, means, sig), atol=1e-14)


def test_assign_examples():
    b = VoltageBlocks([8 * mV, 24 * mV, 40 * mV])
    np.testing.assert_array_equal(assign_photon_numbers([0.0, 24 * mV, 23.999 * mV, 1.0], b), [0, 2, 1, 3])


def test_assign_noiseless_amplitudes_exactly():
    sig = np.full(32, 1 * mV)
    g = GaussianMixture(AMPS, sig, np.full(32, 1 / 32))
    np.testing.assert_array_equal(assign_photon_numbers(AMPS, voltage_blocks(g)), np.arange(1, 33))


@given(st.lists(st.floats(-0.1, 0.3), min_size=2, max_size=50))
def test_assign_is_monotone(a):
    b = VoltageBlocks([8 * mV, 24 * mV, 40 * mV, 56 * mV])
    a = np.sort(a)
    assert np.all(np.diff(assign_photon_numbers(a, b)) >= 0)


def test_default_circuit_assignment_accuracy():
    # 16 mV pitch with the amplifier's 3 mV noise
    rng = np.random.default_rng(21)
    k = rng.integers(1, 8, 100_000)
    a = sample_amplitudes(AMPS, k, 3 * mV, rng)
    g = GaussianMixture(AMPS[:7], np.full(7, 3 * mV), np.full(7, 1 / 7))
    n = assign_photon_numbers(a, voltage_blocks(g))
    acc = np.array([np.mean(n[k == c] == c) for c in range(1, 7)])
    assert np.all(acc > 0.99)


# -- staircase ----------------------------------------------------------------------


def test_staircase_plateaus():
    levels = np.arange(0, 41) * mV
    counts = np.select([levels < 10 * mV, levels < 20 * mV, levels < 30 * mV], [1000, 600, 100], 0)
    b = VoltageBlocks([5 * mV, 15 * mV, 25 * mV])
    np.testing.assert_allclose(staircase_to_distribution(ThresholdStaircase(levels, counts), b), [400, 500, 100])


def test_staircase_all_zero():
    st0 = ThresholdStaircase(np.arange(10) * mV, np.zeros(10))
    np.testing.assert_array_equal(staircase_to_distribution(st0, VoltageBlocks([2 * mV, 5 * mV])), [0, 0])


def test_staircase_rejects_rising_counts():
    st1 = ThresholdStaircase(np.arange(5) * mV, [100, 90, 120, 10, 0])
    with pytest.raises(DomainError, match="rises"):
        staircase_to_distribution(st1, VoltageBlocks([1 * mV, 3 * mV]))


def test_staircase_must_cover_boundaries():
    st1 = ThresholdStaircase(np.arange(5) * mV, [5, 4, 3, 2, 1])
    with pytest.raises(DomainError, match="cover"):
        staircase_to_distribution(st1, VoltageBlocks([1 * mV, 30 * mV]))


def test_staircase_counts_strictly_above():
    st1 = staircase_from_amplitudes([1 * mV, 2 * mV, 2 * mV], levels=[0.0, 1 * mV, 2 * mV])
    np.testing.assert_array_equal(st1.counts, [3, 2, 0])


def test_staircase_matches_direct_tally():
    rng = np.random.default_rng(4)
    data = sample_click_dataset(DetectorArrayConfig(), 1.0, 100_000, seed=4)
    a = sample_amplitudes(AMPS, data.clicked_pixels, 3 * mV, rng)
    g = GaussianMixture(AMPS[:12], np.full(12, 3 * mV), np.full(12, 1 / 12))
    b = voltage_blocks(g)
    from_stairs = staircase_to_distribution(staircase_from_amplitudes(a, top=b.boundaries[-1]), b)
    direct = np.bincount(assign_photon_numbers(a, b), minlength=13)[1:]
    big = direct >= 1000
    np.testing.assert_allclose(from_stairs[big], direct[big], rtol=0.01)
    # totals are conserved up to the interpolation at V_1
    assert from_stairs.sum() == pytest.approx(np.sum(a > b.boundaries[0]), rel=1e-3)


# -- amplitude sampling ---------------------------------------------------------------


def test_sampled_amplitudes_skip_untriggered_pulses():
    a = sample_amplitudes(AMPS, [0, 1, 0, 2], 0.0, np.random.default_rng(0))
    np.testing.assert_allclose(a, AMPS[[0, 1]])


def test_sqrt_growth_noise():
    rng = np.random.default_rng(5)
    a = sample_amplitudes(AMPS, np.full(40_000, 4), 3 * mV, rng, sqrt_growth=True)
    assert a.std() == pytest.approx(6 * mV, rel=0.03)


def test_sampling_beyond_map():
    with pytest.raises(DomainError):
        sample_amplitudes(AMPS[:3], [4], 0.0, np.random.default_rng(0))
