"""Readout circuit: pulse amplitude and timing versus fired pixels.

Each fired pixel adds a resistive step to the series chain, so the output
amplitude grows almost linearly with the number of pixels that clicked,
and larger pulses cross a fixed threshold with less jitter.
"""

import numpy as np

from pnrdet.circuit import CircuitParams, amplitude_map, jitter_fwhm, simulate_pulse

params = CircuitParams(amplifier_noise_rms=0.0)

# %% Amplitude staircase
amps = amplitude_map(params, 12)
print("amplitude (mV):", np.round(amps * 1e3, 2))
print("step (mV):     ", np.round(np.diff(amps) * 1e3, 2))

# %% One noiseless trace with three pixels firing together
trace = simulate_pulse(params, [(p, 1e-9) for p in range(3)])
print(f"3-pixel peak {trace.peak_amplitude() * 1e3:.2f} mV at {trace.times[trace.peak_index()] * 1e9:.2f} ns")

# %% Jitter at half maximum with 3 mV amplifier noise
noisy = CircuitParams()
for n in (1, 2, 4, 8, 16, 32):
    res = jitter_fwhm(noisy, n, n_trials=1000, seed=n)
    print(f"n={n:2d}  FWHM {res.fwhm * 1e12:6.1f} ps")
