"""Detector tomography with coherent probes.

Probe the simulated detector with fifty coherent states, reconstruct the
fidelity matrix and use it to recover the photon statistics of an
unknown input.
"""

import numpy as np

from pnrdet.statistics import DetectorArrayConfig, click_matrix_uniform, poisson_input_matrix, sample_click_dataset
from pnrdet.tomography import ClickCountMatrix, hellinger, reconstruct_input_state, reconstruct_povm

mus = np.round(0.1 * np.arange(1, 51), 10)
I = poisson_input_matrix(mus, 12)
truth = click_matrix_uniform(32, 0.975, 12, 12)

# %% Noiseless data: the reconstruction should return the truth
P = reconstruct_povm(I, truth @ I.entries)
print(f"noiseless: max error {np.abs(P.entries - truth).max():.1e} after {P.iterations} iterations")

# %% Finite data: 1e5 pulses per probe
data = [sample_click_dataset(DetectorArrayConfig(), mu, 100_000, seed=k) for k, mu in enumerate(mus)]
P = reconstruct_povm(I, ClickCountMatrix.from_datasets(data, 12))
print("diagonal:", np.round(P.diagonal()[:7], 4))
print("ideal:   ", np.round(np.diag(truth)[:7], 4))

# %% Recover the photon statistics behind one measured click histogram
observed = data[9].click_histogram(12) / data[9].n_pulses
state = reconstruct_input_state(P, observed)
ref = I.entries[:, 9] / I.entries[:, 9].sum()
print(f"mu={mus[9]}: H = {hellinger(state, ref):.4f}")
