"""From pulse amplitudes to photon-number assignments.

Simulated amplitudes are histogrammed, fitted with a Gaussian mixture,
split into voltage blocks and then used to classify events.
"""

import numpy as np

from pnrdet.circuit import CircuitParams, amplitude_map
from pnrdet.readout import (
    assign_photon_numbers,
    assignment_probability,
    build_histogram,
    select_component_count,
    voltage_blocks,
)
from pnrdet.statistics import DetectorArrayConfig, sample_click_dataset

rng = np.random.default_rng(3)
amap = amplitude_map(CircuitParams(amplifier_noise_rms=0.0), 32)

# %% Amplitudes for a bright coherent pulse (mu = 5)
data = sample_click_dataset(DetectorArrayConfig(), 5.0, 100_000, seed=3)
clicks = data.clicked_pixels[data.clicked_pixels > 0]
amps = amap[clicks - 1] + 3e-3 * rng.standard_normal(clicks.size)
hist = build_histogram(amps)

# %% Pick the number of components and fit
mix = select_component_count(hist, init_spacing=amap[0])
print(f"{mix.k} components, means (mV):", np.round(mix.means * 1e3, 1))

# %% Voltage blocks and classification accuracy
blocks = voltage_blocks(mix)
print("block boundaries (mV):", np.round(blocks.boundaries * 1e3, 1))
print("assignment probability:", np.round(assignment_probability(mix, blocks), 4))
assigned = assign_photon_numbers(amps, blocks)
print("fraction assigned correctly:", np.mean(assigned == np.minimum(clicks, blocks.n_max)))
