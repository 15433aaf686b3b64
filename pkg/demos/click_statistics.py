"""Click statistics of a multiplexed detector.

How many clicks does an m-photon pulse produce on an N-pixel array?
We look at the exact distribution, the ideal fidelity and a Monte Carlo
check, and finish with a non-uniform beam spot.
"""

import numpy as np

from pnrdet.statistics import (
    DetectorArrayConfig,
    GaussianSpot,
    click_distribution_uniform,
    expected_click_distribution,
    ideal_fidelity,
    sample_click_dataset,
)

# %% Exact click distribution for five photons on 32 pixels
dist = click_distribution_uniform(5, 32, 0.975)
print("P(clicks | m=5):", np.round(dist.probs, 5))

# %% Ideal fidelity: probability that n photons give n clicks
for n in range(1, 7):
    print(f"n={n}  F={ideal_fidelity(n, 32, 0.975):.6f}")

# %% Monte Carlo against the analytic distribution for a coherent pulse
cfg = DetectorArrayConfig()
data = sample_click_dataset(cfg, mu=2.0, n_pulses=200_000, seed=1)
mc = data.click_histogram(8) / data.n_pulses
exact = expected_click_distribution(2.0, 32, 0.975, m_max=30)[:9]
print("clicks   simulated   analytic")
for k, (a, b) in enumerate(zip(mc, exact)):
    print(f"{k:6d}   {a:9.5f}   {b:8.5f}")

# %% A focused Gaussian spot concentrates photons on fewer pixels
spot = DetectorArrayConfig(beam_profile=GaussianSpot(0.15))
tight = sample_click_dataset(spot, mu=2.0, n_pulses=200_000, seed=1)
print("mean clicks, uniform:", data.click_histogram() @ np.arange(data.click_histogram().size) / data.n_pulses)
print("mean clicks, spot:   ", tight.click_histogram() @ np.arange(tight.click_histogram().size) / tight.n_pulses)
