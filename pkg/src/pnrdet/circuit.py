"""Lumped transient model of a series array of shunted nanowire pixels.

Each pixel is a nanowire branch (kinetic inductance ``L`` in series with a
switchable resistance) in parallel with a shunt resistor ``R_s``. The pixels
sit in series, fed by a bias current source ``I_b``; the chain voltage drives
the load ``R_L`` of the amplifier.  Writing ``i_k`` for the branch currents,
the chain current is

    I_c = (R_L I_b + R_s sum_k i_k) / (N R_s + R_L)

and every branch obeys ``L di_k/dt = R_s (I_c - i_k) - R_k(t) i_k``.  The
state is carried as the deviation ``i_k - I_b`` so that the idle array sits
exactly at zero.  Between switching events the system is linear with a
symmetric matrix, so each segment is integrated exactly through its
eigendecomposition.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import List, Optional, Sequence, Tuple

import numpy as np
from scipy import optimize

from .errors import DomainError, StabilityError, ThresholdError

__all__ = [
    "CircuitParams",
    "PulseTrace",
    "JitterResult",
    "simulate_pulse",
    "amplitude_map",
    "jitter_fwhm",
    "recovery_time",
    "calibrate_hotspot_resistance",
    "FWHM_PER_SIGMA",
]

FWHM_PER_SIGMA = 2.0 * math.sqrt(2.0 * math.log(2.0))

# photon arrival used by the derived operations
DEFAULT_ARRIVAL = 1e-9


@dataclass(frozen=True)
class CircuitParams:
    """Electrical model of the detector and its readout.

    The hotspot resistance default is the value returned by
    :func:`calibrate_hotspot_resistance` for a 16 mV single-pixel pulse.
    """

    n_pixels: int = 32
    bias_current: float = 16.0e-6
    switching_current: float = 18.0e-6
    shunt_resistance: float = 40.0
    kinetic_inductance_per_pixel: float = 400e-9
    hotspot_resistance: float = 2370.6
    hotspot_duration: float = 0.3e-9
    load_resistance: float = 50.0
    amplifier_gain_db: float = 58.0
    amplifier_noise_rms: float = 3.0e-3
    sample_interval: float = 5e-12
    trace_duration: float = 40e-9
    retrap_fraction: float = 0.5

    def __post_init__(self):
        if int(self.n_pixels) != self.n_pixels or self.n_pixels < 1:
            raise DomainError(f"n_pixels must be a positive integer, got {self.n_pixels}")
        if not 0 < self.bias_current < self.switching_current:
            raise DomainError("bias_current must be positive and below switching_current")
        if not self.hotspot_resistance > self.shunt_resistance > 0:
            raise DomainError("hotspot_resistance must exceed a positive shunt_resistance")
        for name in ("kinetic_inductance_per_pixel", "hotspot_duration", "load_resistance", "sample_interval"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")
        if self.amplifier_noise_rms < 0:
            raise DomainError("amplifier_noise_rms must be non-negative")
        if self.trace_duration < 10 * self.sample_interval:
            raise DomainError("trace_duration must cover at least 10 samples")
        if not 0 <= self.retrap_fraction < 1:
            raise DomainError("retrap_fraction must lie in [0, 1)")

    @property
    def gain(self) -> float:
        return 10.0 ** (self.amplifier_gain_db / 20.0)

    @property
    def n_samples(self) -> int:
        return int(round(self.trace_duration / self.sample_interval))

    @property
    def hotspot_time_constant(self) -> float:
        return self.kinetic_inductance_per_pixel / (self.hotspot_resistance + self.shunt_resistance)

    @property
    def recovery_time_constant(self) -> float:
        return self.kinetic_inductance_per_pixel / self.shunt_resistance


@dataclass
class PulseTrace:
    """Sampled amplifier output.

    ``branch_currents`` (samples x pixels) and ``shunt_currents`` are only
    filled when the simulation was asked to record them.
    """

    samples: np.ndarray
    sample_interval: float
    fired_events: List[Tuple[int, float]] = field(default_factory=list)
    chain_current: Optional[np.ndarray] = None
    branch_currents: Optional[np.ndarray] = None
    shunt_currents: Optional[np.ndarray] = None

    @property
    def times(self) -> np.ndarray:
        return np.arange(self.samples.size) * self.sample_interval

    def peak_amplitude(self) -> float:
        # ideal rectifier after the gain stage
        return float(np.max(np.abs(self.samples)))

    def peak_index(self) -> int:
        return int(np.argmax(np.abs(self.samples)))


@dataclass
class JitterResult:
    photon_number: int
    fwhm: float
    n_trials: int
    threshold_fraction: float
    crossing_times: Optional[np.ndarray] = field(default=None, repr=False)


def _check_grid(params: CircuitParams):
    dt = params.sample_interval
    tau = params.hotspot_time_constant
    if dt > tau:
        raise StabilityError(
            f"sample_interval {dt:.3g} s exceeds the hotspot time constant "
            f"L/(R_hotspot + R_shunt) = {tau:.3g} s"
        )
    if dt > params.hotspot_duration:
        raise StabilityError(
            f"sample_interval {dt:.3g} s exceeds hotspot_duration {params.hotspot_duration:.3g} s"
        )


@lru_cache(maxsize=256)
def _segment_system(params: CircuitParams, hot: frozenset):
    """Eigen-decomposition, fixed point and raw matrices for one switching state."""
    N = params.n_pixels
    L = params.kinetic_inductance_per_pixel
    Rs, RL, Ib = params.shunt_resistance, params.load_resistance, params.bias_current
    den = N * Rs + RL
    R = np.zeros(N)
    R[list(hot)] = params.hotspot_resistance
    A = (Rs / L) * (Rs / den) * np.ones((N, N)) - np.diag((Rs + R) / L)
    b = -R * Ib / L
    lam, Q = np.linalg.eigh(A)
    d_eq = -np.linalg.solve(A, b)
    return lam, Q, d_eq, A, b, R


def _chain_deviation(params: CircuitParams, deviation_sum):
    """Chain current minus bias for a given sum of branch-current deviations."""
    N, Rs, RL = params.n_pixels, params.shunt_resistance, params.load_resistance
    return Rs * deviation_sum / (N * Rs + RL)


def simulate_pulse(
    params: CircuitParams,
    events: Sequence[Tuple[int, float]],
    seed: Optional[int] = None,
    record_currents: bool = False,
    noise: bool = True,
) -> PulseTrace:
    """Integrate the array response to photon ``events`` given as ``(pixel, time)``.

    Arrival times are rounded to the sample grid.  A photon only opens a
    hotspot when its pixel is superconducting and carries more than
    ``retrap_fraction * switching_current``.  White Gaussian noise of
    ``amplifier_noise_rms`` is added to every output sample unless
    ``noise=False``.
    """
    _check_grid(params)
    N = params.n_pixels
    dt = params.sample_interval
    n = params.n_samples
    hot_len = max(1, int(round(params.hotspot_duration / dt)))

    pending = []
    for pixel, t in events:
        if not 0 <= pixel < N:
            raise DomainError(f"pixel index {pixel} outside 0..{N - 1}")
        if not 0 <= t < params.trace_duration:
            raise DomainError(f"arrival time {t} outside the trace")
        pending.append((int(round(t / dt)), int(pixel), float(t)))
    pending.sort()

    dev_sum = np.empty(n)
    currents = np.empty((n, N)) if record_currents else None
    shunts = np.empty((n, N)) if record_currents else None
    Ib = params.bias_current
    state = np.zeros(N)
    hot_until = {}
    fired = []
    retrap = params.retrap_fraction * params.switching_current

    s = 0
    ev = 0
    while s < n:
        # switching updates at sample s
        for pixel in [p for p, end in hot_until.items() if end <= s]:
            del hot_until[pixel]
        while ev < len(pending) and pending[ev][0] <= s:
            _, pixel, t = pending[ev]
            ev += 1
            if pixel not in hot_until and Ib + state[pixel] > retrap:
                hot_until[pixel] = s + hot_len
                fired.append((pixel, t))
        stops = [n]
        if ev < len(pending):
            stops.append(pending[ev][0])
        stops.extend(hot_until.values())
        stop = max(min(stops), s + 1)

        lam, Q, d_eq, A, b, R = _segment_system(params, frozenset(hot_until))
        tau = np.arange(stop - s + 1) * dt
        coeff = np.exp(np.outer(tau, lam)) * (Q.T @ (state - d_eq))
        dev_sum[s:stop] = d_eq.sum() + coeff[:-1] @ Q.sum(axis=0)
        if record_currents:
            seg = d_eq + coeff[:-1] @ Q.T
            currents[s:stop] = Ib + seg
            # shunt current from the branch voltage, independent of the chain current
            v = params.kinetic_inductance_per_pixel * (seg @ A.T + b) + R * (Ib + seg)
            shunts[s:stop] = v / params.shunt_resistance
        state = d_eq + Q @ coeff[-1]
        s = stop

    chain_dev = _chain_deviation(params, dev_sum)
    out = -params.gain * params.load_resistance * chain_dev
    if noise and params.amplifier_noise_rms > 0:
        rng = np.random.default_rng(seed)
        out = out + rng.normal(0.0, params.amplifier_noise_rms, n)
    return PulseTrace(
        samples=out,
        sample_interval=dt,
        fired_events=fired,
        chain_current=Ib + chain_dev if record_currents else None,
        branch_currents=currents,
        shunt_currents=shunts,
    )


def _simultaneous(k: int, t0: float = DEFAULT_ARRIVAL):
    return [(pixel, t0) for pixel in range(k)]


def amplitude_map(params: CircuitParams, k_max: int) -> np.ndarray:
    """Noiseless peak amplitude for k = 1..k_max simultaneously fired pixels."""
    if not 1 <= k_max <= params.n_pixels:
        raise DomainError(f"k_max must lie in 1..{params.n_pixels}")
    amps = np.array([
        simulate_pulse(params, _simultaneous(k), noise=False).peak_amplitude() for k in range(1, k_max + 1)
    ])
    if np.any(np.diff(amps) <= 0):
        raise DomainError("amplitude map is not strictly increasing; check the circuit parameters")
    return amps


def _first_crossings(noisy: np.ndarray, threshold: float, t_start: float, dt: float) -> np.ndarray:
    """Interpolated first upward crossing per row; NaN where the row never crosses."""
    above = noisy >= threshold
    hit = above.any(axis=1)
    j = np.argmax(above, axis=1)
    out = np.full(noisy.shape[0], np.nan)
    rows = np.flatnonzero(hit)
    jj = j[rows]
    t = t_start + jj * dt
    inner = jj > 0
    r, c = rows[inner], jj[inner]
    y0, y1 = noisy[r, c - 1], noisy[r, c]
    t[inner] -= dt * (y1 - threshold) / (y1 - y0)
    out[rows] = t
    return out


def jitter_fwhm(
    params: CircuitParams,
    photon_number: int,
    n_trials: int = 1000,
    threshold_fraction: float = 0.5,
    seed: int = 0,
    keep_times: bool = False,
) -> JitterResult:
    """Timing jitter (FWHM) of the threshold crossing for ``photon_number`` fired pixels.

    The threshold is ``threshold_fraction`` of the noiseless single-pixel
    amplitude.  Trials share the noiseless waveform and differ only by
    output noise; the search for the first crossing starts at the photon
    arrival sample.
    """
    if n_trials < 100:
        raise DomainError("n_trials must be >= 100")
    if not 0 < threshold_fraction < 1:
        raise DomainError("threshold_fraction must lie in (0, 1)")
    if not 1 <= photon_number <= params.n_pixels:
        raise DomainError(f"photon_number must lie in 1..{params.n_pixels}")
    dt = params.sample_interval
    single = simulate_pulse(params, _simultaneous(1), noise=False).peak_amplitude()
    threshold = threshold_fraction * single
    clean = simulate_pulse(params, _simultaneous(photon_number), noise=False).samples

    start = int(round(DEFAULT_ARRIVAL / dt))
    peak = start + int(np.argmax(clean[start:]))
    below = np.flatnonzero(clean[peak:] < threshold)
    stop = peak + (below[0] if below.size else clean.size - peak)
    window = clean[start:stop]

    rng = np.random.default_rng(seed)
    sigma = params.amplifier_noise_rms
    chunk = max(1, int(4_000_000 // window.size))
    times = []
    for lo in range(0, n_trials, chunk):
        rows = min(chunk, n_trials - lo)
        if sigma > 0:
            noisy = window + rng.normal(0.0, sigma, (rows, window.size))
        else:
            noisy = np.broadcast_to(window, (rows, window.size))
        times.append(_first_crossings(noisy, threshold, start * dt, dt))
    times = np.concatenate(times)

    missed = np.isnan(times).mean()
    if missed > 0.01:
        raise ThresholdError(
            f"threshold {threshold:.3g} V never crossed in {missed:.1%} of trials for n={photon_number}"
        )
    crossing = times[~np.isnan(times)]
    fwhm = FWHM_PER_SIGMA * float(np.std(crossing, ddof=1))
    return JitterResult(
        photon_number=photon_number,
        fwhm=fwhm,
        n_trials=n_trials,
        threshold_fraction=threshold_fraction,
        crossing_times=crossing if keep_times else None,
    )


def recovery_time(params: CircuitParams, fraction: float) -> float:
    """Time from the single-pixel pulse peak until its branch current regains ``fraction`` of the bias."""
    if not 0 < fraction < 1:
        raise DomainError("fraction must lie in (0, 1)")
    trace = simulate_pulse(params, _simultaneous(1), noise=False, record_currents=True)
    peak = trace.peak_index()
    current = trace.branch_currents[peak:, 0]
    target = fraction * params.bias_current
    if current[0] >= target:
        return 0.0
    idx = np.flatnonzero(current >= target)
    if idx.size == 0:
        raise DomainError(f"branch current does not recover to {fraction:.0%} of bias within the trace")
    j = idx[0]
    # linear interpolation inside the final sample interval
    frac = (target - current[j - 1]) / (current[j] - current[j - 1])
    return (j - 1 + frac) * params.sample_interval


def calibrate_hotspot_resistance(
    params: CircuitParams,
    target_amplitude: float = 16e-3,
    r_min: Optional[float] = None,
    r_max: float = 1e6,
    xtol: float = 1e-3,
) -> CircuitParams:
    """Return ``params`` with the hotspot resistance tuned to a target single-pixel amplitude.

    A logarithmic sweep brackets the target, then Brent's bisection refines it.
    Raises DomainError when the target is out of reach for the other
    parameters.
    """
    r_min = params.shunt_resistance * 1.01 if r_min is None else r_min
    max_dt = params.sample_interval

    def amp(r):
        trial = replace(params, hotspot_resistance=r)
        if trial.hotspot_time_constant < max_dt:
            raise DomainError("hotspot resistance outruns the sample grid; reduce sample_interval")
        return simulate_pulse(trial, _simultaneous(1), noise=False).peak_amplitude() - target_amplitude

    grid = np.geomspace(r_min, r_max, 25)
    lo = None
    prev = amp(grid[0])
    if prev >= 0:
        raise DomainError("target amplitude below the smallest reachable pulse")
    for r0, r1 in zip(grid[:-1], grid[1:]):
        try:
            val = amp(r1)
        except DomainError:
            break
        if val >= 0:
            lo = (r0, r1)
            break
    if lo is None:
        raise DomainError("target amplitude not reachable by tuning the hotspot resistance")
    r = optimize.brentq(amp, *lo, xtol=xtol)
    return replace(params, hotspot_resistance=float(r))
