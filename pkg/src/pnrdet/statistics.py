"""Photon and click statistics for an N-pixel spatially multiplexed detector.

Exact results are available for uniform illumination; anything else is
handled by Monte-Carlo sampling through :func:`sample_click_dataset`.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterator, Optional, Union

import numpy as np
from scipy import special, stats

from .errors import DomainError

__all__ = [
    "Uniform",
    "GaussianSpot",
    "DetectorArrayConfig",
    "PhotonDistribution",
    "ProbabilityMatrix",
    "ClickDataset",
    "poisson_input_matrix",
    "pixel_hit_probabilities",
    "click_distribution_uniform",
    "click_matrix_uniform",
    "expected_click_distribution",
    "ideal_fidelity",
    "sample_click_dataset",
    "sde",
]


@dataclass(frozen=True)
class Uniform:
    """Flat illumination across all pixels."""


@dataclass(frozen=True)
class GaussianSpot:
    """Centered 1-D Gaussian spot.

    ``sigma_fraction`` is the spot standard deviation divided by the array
    half-width.
    """

    sigma_fraction: float

    def __post_init__(self):
        if not self.sigma_fraction > 0:
            raise DomainError(f"sigma_fraction must be > 0, got {self.sigma_fraction}")


BeamProfile = Union[Uniform, GaussianSpot]


def _check_probability(name, value):
    if not 0.0 <= value <= 1.0:
        raise DomainError(f"{name} must lie in [0, 1], got {value}")


@dataclass(frozen=True)
class DetectorArrayConfig:
    """Statistical identity of the detector.

    Parameters
    ----------
    n_pixels : int
        Number of series pixels, 1..1024.
    efficiency : float
        Per-photon detection probability.
    beam_profile : Uniform or GaussianSpot
    dark_count_prob : float
        Probability of a dark click per pulse gate.
    crosstalk_prob : float
        Probability that a fired pixel also fires one neighbour.
    """

    n_pixels: int = 32
    efficiency: float = 0.975
    beam_profile: BeamProfile = field(default_factory=Uniform)
    dark_count_prob: float = 0.0
    crosstalk_prob: float = 0.0

    def __post_init__(self):
        if not (isinstance(self.n_pixels, (int, np.integer)) and 1 <= self.n_pixels <= 1024):
            raise DomainError(f"n_pixels must be an integer in [1, 1024], got {self.n_pixels}")
        _check_probability("efficiency", self.efficiency)
        _check_probability("dark_count_prob", self.dark_count_prob)
        _check_probability("crosstalk_prob", self.crosstalk_prob)
        if not isinstance(self.beam_profile, (Uniform, GaussianSpot)):
            raise DomainError(f"unknown beam profile {self.beam_profile!r}")


@dataclass
class PhotonDistribution:
    """Probabilities indexed by photon (or click) number 0..M.

    A truncated distribution carries its missing mass in ``tail_mass``.
    """

    probs: np.ndarray
    tail_mass: float = 0.0

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.ndim != 1 or self.probs.size == 0:
            raise DomainError("probs must be a non-empty 1-D array")
        if np.any(self.probs < 0):
            raise DomainError("probabilities must be non-negative")
        if self.tail_mass < 0:
            raise DomainError("tail_mass must be non-negative")
        total = self.probs.sum()
        if abs(total + self.tail_mass - 1.0) > 1e-9:
            raise DomainError(f"probabilities sum to {total} with tail {self.tail_mass}")

    def __len__(self):
        return self.probs.size

    def __getitem__(self, n):
        return self.probs[n]


@dataclass
class ProbabilityMatrix:
    """Poisson probe ensemble: ``entries[m, k]`` = P(m photons | mus[k])."""

    entries: np.ndarray
    mus: np.ndarray
    tail_mass: np.ndarray

    @property
    def m_max(self) -> int:
        return self.entries.shape[0] - 1

    @property
    def n_probes(self) -> int:
        return self.entries.shape[1]


@dataclass
class ClickDataset:
    """Per-pulse Monte-Carlo output.

    ``clicked_pixels[i]`` is the number of distinct fired pixels in pulse ``i``;
    ``true_photon_number`` is kept when the generator knows it.
    """

    clicked_pixels: np.ndarray
    mu: float
    n_pixels: int
    true_photon_number: Optional[np.ndarray] = None

    @property
    def n_pulses(self) -> int:
        return self.clicked_pixels.size

    def records(self) -> Iterator[tuple]:
        """Yield ``(pulse_index, true_photon_number, clicked_pixels)`` tuples."""
        truth = self.true_photon_number
        for i, c in enumerate(self.clicked_pixels):
            yield i, (None if truth is None else int(truth[i])), int(c)

    def click_histogram(self, n_max: Optional[int] = None) -> np.ndarray:
        n_max = self.n_pixels if n_max is None else n_max
        counts = np.bincount(self.clicked_pixels, minlength=n_max + 1)
        if counts.size > n_max + 1:
            # fold the overflow into the last class
            counts = np.concatenate([counts[:n_max], [counts[n_max:].sum()]])
        return counts


def poisson_input_matrix(mus, m_max: int) -> ProbabilityMatrix:
    """Poisson pmf table for rows m = 0..m_max and one column per mean.

    Columns are not renormalised; the mass above ``m_max`` is reported in
    ``tail_mass``.
    """
    mus = np.atleast_1d(np.asarray(mus, dtype=float))
    if mus.ndim != 1 or mus.size == 0:
        raise DomainError("mus must be a non-empty 1-D sequence")
    if np.any(mus < 0) or not np.all(np.isfinite(mus)):
        raise DomainError("mean photon numbers must be finite and >= 0")
    if int(m_max) != m_max or m_max < 1:
        raise DomainError(f"m_max must be an integer >= 1, got {m_max}")
    m = np.arange(int(m_max) + 1)[:, None]
    entries = stats.poisson.pmf(m, mus[None, :])
    tail = np.maximum(stats.poisson.sf(int(m_max), mus), 0.0)
    return ProbabilityMatrix(entries=entries, mus=mus, tail_mass=tail)


def pixel_hit_probabilities(config: DetectorArrayConfig) -> np.ndarray:
    """Probability that a photon lands on each pixel stripe."""
    n = config.n_pixels
    profile = config.beam_profile
    if isinstance(profile, Uniform):
        return np.full(n, 1.0 / n)
    # stripes tile [-1, 1] in units of the array half-width
    edges = np.linspace(-1.0, 1.0, n + 1)
    cdf = special.erf(edges / (profile.sigma_fraction * math.sqrt(2.0)))
    mass = 0.5 * np.diff(cdf)
    return mass / mass.sum()


def _occupancy_table(m: int, n_pixels: int) -> np.ndarray:
    """``table[d, n]``: probability that d uniform photons hit exactly n distinct pixels.

    Built one photon at a time; every term is non-negative so the table is
    free of the cancellation in the alternating inclusion-exclusion sum.
    """
    top = min(m, n_pixels)
    table = np.zeros((m + 1, top + 1))
    table[0, 0] = 1.0
    n = np.arange(top + 1)
    stay = n / n_pixels
    grow = (n_pixels - n + 1) / n_pixels
    for d in range(1, m + 1):
        prev = table[d - 1]
        table[d] = prev * stay
        table[d, 1:] += prev[:-1] * grow[1:]
    return table


def _check_click_args(m, n_pixels, eta):
    if int(m) != m or m < 0:
        raise DomainError(f"photon number must be a non-negative integer, got {m}")
    if int(n_pixels) != n_pixels or n_pixels < 1:
        raise DomainError(f"N must be a positive integer, got {n_pixels}")
    _check_probability("eta", eta)


def click_distribution_uniform(m: int, n_pixels: int, eta: float) -> PhotonDistribution:
    """Distribution of distinct fired pixels for ``m`` photons under flat illumination.

    Each photon survives with probability ``eta`` and lands on one of
    ``n_pixels`` equally likely pixels; the result is indexed by click number
    0..min(m, N).
    """
    _check_click_args(m, n_pixels, eta)
    m, n_pixels = int(m), int(n_pixels)
    occupancy = _occupancy_table(m, n_pixels)
    weights = np.array([math.comb(m, d) * eta**d * (1.0 - eta) ** (m - d) for d in range(m + 1)])
    probs = weights @ occupancy
    return PhotonDistribution(probs)


def click_matrix_uniform(n_pixels: int, eta: float, m_max: int, n_click_max: Optional[int] = None) -> np.ndarray:
    """Exact fidelity matrix ``P[n, m]`` of an ideal uniform detector.

    Click numbers above ``n_click_max`` are folded into the last row.
    """
    n_click_max = min(m_max, n_pixels) if n_click_max is None else n_click_max
    P = np.zeros((n_click_max + 1, m_max + 1))
    for m in range(m_max + 1):
        col = click_distribution_uniform(m, n_pixels, eta).probs
        k = min(col.size, n_click_max + 1)
        P[:k, m] = col[:k]
        P[n_click_max, m] += col[k:].sum()
    return P


def expected_click_distribution(mu: float, n_pixels: int, eta: float, m_max: Optional[int] = None) -> np.ndarray:
    """Click distribution of a Poisson(mu) pulse, marginalised over photon number."""
    if m_max is None:
        m_max = int(mu + 12 * math.sqrt(mu) + 20)
    weights = stats.poisson.pmf(np.arange(m_max + 1), mu)
    out = np.zeros(min(m_max, n_pixels) + 1)
    for m, w in enumerate(weights):
        col = click_distribution_uniform(m, n_pixels, eta).probs
        out[: col.size] += w * col
    return out


def ideal_fidelity(n: int, n_pixels: int, eta: float) -> float:
    """Probability that n photons give n clicks on an ideal N-pixel array: (eta/N)^n N!/(N-n)!."""
    _check_click_args(n, n_pixels, eta)
    if n > n_pixels:
        raise DomainError(f"photon number {n} exceeds pixel count {n_pixels}")
    value = 1.0
    for j in range(int(n)):
        value *= eta * (n_pixels - j) / n_pixels
    return value


def _neighbours(pixels: np.ndarray, n_pixels: int, rng: np.random.Generator) -> np.ndarray:
    step = np.where(rng.random(pixels.size) < 0.5, -1, 1)
    nb = pixels + step
    # edge pixels have a single neighbour
    nb[pixels == 0] = 1
    nb[pixels == n_pixels - 1] = n_pixels - 2
    return nb


def sample_click_dataset(config: DetectorArrayConfig, mu: float, n_pulses: int, seed: int) -> ClickDataset:
    """Monte-Carlo click record for ``n_pulses`` Poisson pulses of mean ``mu``.

    Per pulse: Poisson photon number, pixel placement from the beam profile,
    efficiency thinning, at most one dark click on a uniform pixel, then one
    generation of nearest-neighbour crosstalk from every fired pixel.
    """
    if int(n_pulses) != n_pulses or n_pulses < 1:
        raise DomainError(f"n_pulses must be a positive integer, got {n_pulses}")
    if mu < 0:
        raise DomainError(f"mu must be >= 0, got {mu}")
    n_pulses = int(n_pulses)
    N = config.n_pixels
    rng = np.random.default_rng(seed)

    photons = rng.poisson(mu, n_pulses)
    owner = np.repeat(np.arange(n_pulses, dtype=np.int64), photons)
    if isinstance(config.beam_profile, Uniform):
        pixel = rng.integers(0, N, size=owner.size)
    else:
        pixel = rng.choice(N, size=owner.size, p=pixel_hit_probabilities(config))
    detected = rng.random(owner.size) < config.efficiency
    codes = [owner[detected] * N + pixel[detected]]

    dark = np.flatnonzero(rng.random(n_pulses) < config.dark_count_prob)
    codes.append(dark * N + rng.integers(0, N, size=dark.size))
    fired = np.unique(np.concatenate(codes))

    if N > 1 and config.crosstalk_prob > 0:
        src = fired[rng.random(fired.size) < config.crosstalk_prob]
        nb = _neighbours(src % N, N, rng)
        fired = np.unique(np.concatenate([fired, (src // N) * N + nb]))

    clicked = np.bincount(fired // N, minlength=n_pulses).astype(np.int64)
    return ClickDataset(clicked_pixels=clicked, mu=float(mu), n_pixels=N, true_photon_number=photons)


def sde(pcr: float, dcr: float, pr: float) -> float:
    """System detection efficiency (PCR - DCR) / PR."""
    if pr <= 0:
        raise DomainError(f"photon rate must be positive, got {pr}")
    if dcr < 0 or pcr < dcr:
        raise DomainError(f"need pcr >= dcr >= 0, got pcr={pcr}, dcr={dcr} (miscalibrated rates?)")
    return (pcr - dcr) / pr
