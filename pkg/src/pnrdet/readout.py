"""Amplitude-domain readout: histograms, Gaussian peak fitting and photon-number assignment.

Voltages are in volts throughout.  A pulse whose amplitude falls in block
``[V_n, V_{n+1})`` is assigned photon number ``n``; anything below ``V_1`` is
treated as no detection.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import List, Optional, Tuple

import numpy as np
from scipy.special import logsumexp, ndtr

from .errors import DomainError, FitError

__all__ = [
    "AmplitudeHistogram",
    "GaussianMixture",
    "VoltageBlocks",
    "ThresholdStaircase",
    "build_histogram",
    "fit_gaussian_mixture",
    "resolvable_peak_count",
    "select_component_count",
    "voltage_blocks",
    "assignment_probability",
    "assign_photon_numbers",
    "staircase_from_amplitudes",
    "staircase_to_distribution",
    "sample_amplitudes",
]


@dataclass(frozen=True)
class AmplitudeHistogram:
    bin_edges: np.ndarray
    counts: np.ndarray
    total_events: int

    def __post_init__(self):
        edges = np.asarray(self.bin_edges, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if edges.ndim != 1 or edges.size < 2 or np.any(np.diff(edges) <= 0):
            raise DomainError("bin edges must be strictly increasing with at least two entries")
        if counts.shape != (edges.size - 1,):
            raise DomainError("need exactly one count per bin")
        if np.any(counts < 0):
            raise DomainError("counts must be non-negative")
        if not np.isclose(counts.sum(), self.total_events, rtol=0, atol=1e-9 * max(1, self.total_events)):
            raise DomainError(f"counts sum to {counts.sum()}, expected {self.total_events}")
        object.__setattr__(self, "bin_edges", edges)
        object.__setattr__(self, "counts", counts)

    @property
    def centers(self) -> np.ndarray:
        return 0.5 * (self.bin_edges[1:] + self.bin_edges[:-1])

    @property
    def bin_width(self) -> float:
        return float(np.min(np.diff(self.bin_edges)))

    def mean(self) -> float:
        return float(self.counts @ self.centers / self.counts.sum())


@dataclass(frozen=True)
class GaussianMixture:
    """Mixture ordered by ascending mean; component ``j`` stands for ``j + 1`` photons."""

    means: np.ndarray
    sigmas: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        means, sigmas, weights = (np.atleast_1d(np.asarray(a, dtype=float)) for a in (self.means, self.sigmas, self.weights))
        if not (means.shape == sigmas.shape == weights.shape) or means.ndim != 1 or means.size == 0:
            raise DomainError("means, sigmas and weights must be equal-length 1-D vectors")
        if np.any(np.diff(means) <= 0):
            raise DomainError("component means must be strictly increasing")
        if np.any(sigmas <= 0):
            raise DomainError("component sigmas must be positive")
        if np.any(weights < 0) or abs(weights.sum() - 1) > 1e-9:
            raise DomainError("weights must be non-negative and sum to 1")
        object.__setattr__(self, "means", means)
        object.__setattr__(self, "sigmas", sigmas)
        object.__setattr__(self, "weights", weights)

    @property
    def k(self) -> int:
        return self.means.size

    @property
    def components(self) -> List[Tuple[float, float, float]]:
        return [(float(m), float(s), float(w)) for m, s, w in zip(self.means, self.sigmas, self.weights)]

    def pdf(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)[..., None]
        z = (v - self.means) / self.sigmas
        return np.sum(self.weights * np.exp(-0.5 * z * z) / (np.sqrt(2 * np.pi) * self.sigmas), axis=-1)


@dataclass(frozen=True)
class VoltageBlocks:
    """Ascending boundaries ``V_1 < V_2 < ...``; class ``n`` covers ``[V_n, V_{n+1})``."""

    boundaries: np.ndarray

    def __post_init__(self):
        b = np.atleast_1d(np.asarray(self.boundaries, dtype=float))
        if b.ndim != 1 or b.size == 0 or np.any(np.diff(b) <= 0):
            raise DomainError("boundaries must be a non-empty strictly increasing vector")
        object.__setattr__(self, "boundaries", b)

    @property
    def n_max(self) -> int:
        """Largest photon number that can be assigned."""
        return self.boundaries.size

    def extended(self, n_max: int) -> "VoltageBlocks":
        """Append boundaries at the last interior pitch until ``n_max`` classes exist.

        With a single boundary there is no pitch to extrapolate and the
        blocks are returned unchanged.
        """
        b = self.boundaries
        if n_max <= b.size or b.size < 2:
            return self
        pitch = b[-1] - b[-2]
        extra = b[-1] + pitch * np.arange(1, n_max - b.size + 1)
        return VoltageBlocks(np.concatenate([b, extra]))


@dataclass(frozen=True)
class ThresholdStaircase:
    """Counter readings: ``counts[i]`` events exceeded comparison level ``levels[i]``."""

    levels: np.ndarray
    counts: np.ndarray

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        counts = np.asarray(self.counts, dtype=float)
        if levels.ndim != 1 or levels.size < 2 or np.any(np.diff(levels) <= 0):
            raise DomainError("levels must be strictly increasing with at least two entries")
        if counts.shape != levels.shape:
            raise DomainError("need one count per level")
        object.__setattr__(self, "levels", levels)
        object.__setattr__(self, "counts", counts)


def build_histogram(amplitudes, n_bins: int = 100) -> AmplitudeHistogram:
    """Equal-width histogram whose outer bins are centred on the extreme amplitudes."""
    a = np.asarray(amplitudes, dtype=float).ravel()
    if a.size == 0:
        raise DomainError("cannot histogram an empty amplitude set")
    if n_bins < 2:
        raise DomainError(f"n_bins must be >= 2, got {n_bins}")
    lo, hi = float(a.min()), float(a.max())
    width = (hi - lo) / (n_bins - 1)
    if width <= 0:
        width = max(abs(lo) * 1e-6, 1e-12)
    edges = lo - 0.5 * width + width * np.arange(n_bins + 1)
    idx = np.clip(np.floor((a - edges[0]) / width).astype(int), 0, n_bins - 1)
    counts = np.bincount(idx, minlength=n_bins)
    return AmplitudeHistogram(edges, counts, int(a.size))


def _log_components(x, means, sigmas, weights):
    z = (x[:, None] - means) / sigmas
    with np.errstate(divide="ignore"):
        return np.log(weights) - np.log(sigmas) - 0.5 * np.log(2 * np.pi) - 0.5 * z * z


def fit_gaussian_mixture(
    hist: AmplitudeHistogram,
    k: int,
    init_spacing: float,
    tol: float = 1e-9,
    max_iters: int = 500,
) -> GaussianMixture:
    """Expectation-maximisation on bin centres weighted by counts.

    Starts from means ``init_spacing * (1..k)``, sigmas ``init_spacing / 5`` and
    equal weights.  Stops when the log-likelihood gains less than ``tol`` per
    event, or after ``max_iters`` rounds.
    """
    if k < 1:
        raise DomainError(f"k must be >= 1, got {k}")
    if init_spacing <= 0:
        raise DomainError("init_spacing must be positive")
    keep = hist.counts > 0
    x, c = hist.centers[keep], hist.counts[keep]
    total = c.sum()
    if total <= 0:
        raise DomainError("histogram holds no events")
    floor = hist.bin_width / 10

    means = init_spacing * np.arange(1, k + 1, dtype=float)
    sigmas = np.full(k, init_spacing / 5)
    weights = np.full(k, 1.0 / k)

    lc = _log_components(x, means, sigmas, weights)
    ll = float(c @ logsumexp(lc, axis=1))
    for _ in range(max_iters):
        resp = np.exp(lc - logsumexp(lc, axis=1, keepdims=True)) * c[:, None]
        nk = resp.sum(axis=0)
        if np.any(nk <= 0):
            raise FitError(f"a component captured no events; try fewer than {k} components")
        weights = nk / total
        means = (resp * x[:, None]).sum(axis=0) / nk
        sigmas = np.sqrt((resp * (x[:, None] - means) ** 2).sum(axis=0) / nk)
        if np.any(sigmas < floor):
            raise FitError(f"component width collapsed below a tenth of a bin; try fewer than {k} components")
        lc = _log_components(x, means, sigmas, weights)
        ll_new = float(c @ logsumexp(lc, axis=1))
        assert ll_new >= ll - 1e-10 * abs(ll), "EM step decreased the log-likelihood"
        gain = ll_new - ll
        ll = ll_new
        if gain < tol * total:
            break

    order = np.argsort(means)
    weights = weights[order] / weights.sum()
    try:
        return GaussianMixture(means[order], sigmas[order], weights)
    except DomainError as exc:
        raise FitError(f"fit did not give distinct components ({exc}); try fewer than {k} components") from exc


def resolvable_peak_count(mixture: GaussianMixture, n_grid: int = 4000) -> int:
    """Number of leading components separated from their successor by a density dip.

    Counting starts at the lowest mean and stops at the first adjacent pair
    whose mixture density has no interior minimum between the two means.
    """
    count = 1
    for j in range(mixture.k - 1):
        v = np.linspace(mixture.means[j], mixture.means[j + 1], n_grid)
        d = mixture.pdf(v)
        inner = d[1:-1]
        if inner.min() < min(d[0], d[-1]) and np.argmin(d) not in (0, n_grid - 1):
            count += 1
        else:
            break
    return count


def select_component_count(
    hist: AmplitudeHistogram,
    init_spacing: float,
    k_max: int = 16,
    min_events: float = 50.0,
) -> GaussianMixture:
    """Largest mixture whose every peak is resolvable and holds ``min_events`` events.

    Fits ``k = 1..k_max`` in turn; fits that fail are skipped.
    """
    best = None
    for k in range(1, k_max + 1):
        try:
            g = fit_gaussian_mixture(hist, k, init_spacing)
        except FitError:
            continue
        if resolvable_peak_count(g) == k and g.weights.min() * hist.total_events >= min_events:
            best = g
    if best is None:
        raise FitError("no mixture with resolvable, populated components was found")
    return best


def voltage_blocks(mixture: GaussianMixture, zero_boundary: Optional[float] = None) -> VoltageBlocks:
    """Midpoints between adjacent means, preceded by the noise-floor cut ``V_1``.

    ``zero_boundary`` defaults to half the first mean.
    """
    if zero_boundary is None:
        zero_boundary = 0.5 * mixture.means[0]
    if zero_boundary >= mixture.means[0]:
        raise DomainError(f"zero boundary {zero_boundary:g} V must lie below the first mean {mixture.means[0]:g} V")
    mids = 0.5 * (mixture.means[1:] + mixture.means[:-1])
    return VoltageBlocks(np.concatenate([[zero_boundary], mids]))


def assignment_probability(mixture: GaussianMixture, blocks: VoltageBlocks) -> np.ndarray:
    """Mass of component ``n`` inside block ``n``, for ``n = 1..k``."""
    if blocks.n_max < mixture.k:
        raise DomainError(f"blocks cover {blocks.n_max} classes but the mixture has {mixture.k} components")
    lo = blocks.boundaries[: mixture.k]
    hi = np.append(blocks.boundaries[1:], np.inf)[: mixture.k]
    return ndtr((hi - mixture.means) / mixture.sigmas) - ndtr((lo - mixture.means) / mixture.sigmas)


def assign_photon_numbers(amplitudes, blocks: VoltageBlocks) -> np.ndarray:
    """Photon number per amplitude; a value on a boundary goes to the higher class."""
    return np.searchsorted(blocks.boundaries, np.asarray(amplitudes, dtype=float), side="right")


def staircase_from_amplitudes(amplitudes, pitch: float = 1e-3, levels=None, top: float = 0.0) -> ThresholdStaircase:
    """Counter sweep: number of amplitudes strictly above each comparison level.

    Default levels run from 0 V at ``pitch`` spacing to at least one pitch
    past both ``top`` and the largest amplitude.
    """
    a = np.sort(np.asarray(amplitudes, dtype=float).ravel())
    if levels is None:
        hi = max(top, a[-1] if a.size else 0.0, 0.0)
        levels = pitch * np.arange(int(np.floor(hi / pitch)) + 2)
    levels = np.asarray(levels, dtype=float)
    counts = a.size - np.searchsorted(a, levels, side="right")
    return ThresholdStaircase(levels, counts)


def staircase_to_distribution(staircase: ThresholdStaircase, blocks: VoltageBlocks, rtol: float = 0.01) -> np.ndarray:
    """Events per photon number ``1..n_max`` from plateau differences of the staircase."""
    b = blocks.boundaries
    lv, ct = staircase.levels, staircase.counts
    if b[0] < lv[0] or b[-1] > lv[-1]:
        raise DomainError("staircase levels must cover every block boundary")
    peak = ct.max() if ct.size else 0.0
    rise = np.diff(ct)
    if peak > 0 and np.any(rise > rtol * peak):
        raise DomainError(f"staircase rises by {rise.max():g} counts, beyond {rtol:.0%} of its maximum")
    at = np.interp(b, lv, ct)
    return np.append(at[:-1] - at[1:], at[-1])


def sample_amplitudes(
    amplitude_map: np.ndarray,
    clicks,
    sigma1: float,
    rng: np.random.Generator,
    sqrt_growth: bool = False,
) -> np.ndarray:
    """Pulse heights for triggered pulses (clicks >= 1) with Gaussian readout noise.

    ``amplitude_map[k - 1]`` is the noiseless height for ``k`` fired pixels.
    Noise has standard deviation ``sigma1``, or ``sigma1 * sqrt(k)`` with
    ``sqrt_growth``.
    """
    clicks = np.asarray(clicks)
    k = clicks[clicks >= 1]
    amps = np.asarray(amplitude_map, dtype=float)
    if k.size and k.max() > amps.size:
        raise DomainError(f"amplitude map covers {amps.size} pixels, got {k.max()} clicks")
    sd = sigma1 * np.sqrt(k) if sqrt_growth else np.full(k.size, float(sigma1))
    return amps[k - 1] + sd * rng.standard_normal(k.size)
