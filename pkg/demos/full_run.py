"""End-to-end run with the default configuration.

Simulate, read out, reconstruct and report, then write the plot tables.
"""

import sys

from pnrdet.pipeline import FIGURES, RunConfig, emit_plot_data, run

out = sys.argv[1] if len(sys.argv) > 1 else "run"
report = run(RunConfig(seed=0), out)
for stage, status in report.status.items():
    print(f"{stage:16s} {status}")

print("mixture components:", report.metrics["mixture_components"])
print("fidelity diagonal:", [round(v, 3) for v in report.metrics["fidelity_diagonal"][:7]])
print("crosstalk estimate:", report.metrics["p_xtalk"])
for fig in FIGURES:
    print(emit_plot_data(report, fig))
