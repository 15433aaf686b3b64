"""Plain-text file formats: CSV tables and JSON sidecars.

Every writer produces byte-stable output for identical inputs (fixed float
formatting, sorted JSON keys, ``\\n`` line endings), so files can be compared
by digest.
"""

from __future__ import annotations

import csv
import hashlib
import json
from importlib import resources
from pathlib import Path
from typing import Dict, Iterable, List, Sequence, Tuple

import numpy as np

from .circuit import PulseTrace
from .errors import DomainError
from .readout import AmplitudeHistogram, GaussianMixture, ThresholdStaircase, VoltageBlocks
from .tomography import FidelityMatrix

__all__ = [
    "FLOAT_FORMAT",
    "sha256_file",
    "write_table",
    "read_table",
    "write_trace_csv",
    "read_trace_csv",
    "write_trace_batch",
    "write_histogram_csv",
    "read_histogram_csv",
    "write_staircase_csv",
    "read_staircase_csv",
    "write_json",
    "mixture_to_dict",
    "mixture_from_dict",
    "blocks_to_dict",
    "blocks_from_dict",
    "write_matrix_csv",
    "read_matrix_csv",
    "write_fidelity_csv",
    "read_fidelity_csv",
    "measured_fidelity_matrix",
]

FLOAT_FORMAT = "%.10g"


def _fmt(v) -> str:
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    return FLOAT_FORMAT % float(v)


def sha256_file(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def write_table(path, header: Sequence[str], rows: Iterable[Sequence]) -> Path:
    """CSV with a header line; numbers use :data:`FLOAT_FORMAT`, strings pass through."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([v if isinstance(v, str) else _fmt(v) for v in row])
    return path


def read_table(path, expected_header: Sequence[str]) -> List[List[str]]:
    with open(path, newline="") as fh:
        rows = list(csv.reader(fh))
    if not rows or [c.strip() for c in rows[0]] != list(expected_header):
        raise DomainError(f"{path}: expected header {','.join(expected_header)}")
    return rows[1:]


# -- traces ---------------------------------------------------------------------


def write_trace_csv(trace: PulseTrace, path) -> Path:
    return write_table(path, ["time_s", "voltage_v"], zip(trace.times, trace.samples))


def read_trace_csv(path) -> Tuple[np.ndarray, np.ndarray]:
    rows = read_table(path, ["time_s", "voltage_v"])
    data = np.array(rows, dtype=float).reshape(-1, 2)
    return data[:, 0], data[:, 1]


def write_json(obj, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n")
    return path


def write_trace_batch(traces: Sequence[Tuple[str, PulseTrace, Dict]], out_dir) -> Path:
    """Write ``<name>.csv`` per trace and a ``manifest.json`` with each trace's metadata and digest.

    Each item is ``(name, trace, meta)``; ``meta`` should carry whatever is
    needed to regenerate the trace (seed, events, parameters).
    """
    out_dir = Path(out_dir)
    entries = {}
    for name, trace, meta in traces:
        p = write_trace_csv(trace, out_dir / f"{name}.csv")
        entries[name] = {
            "file": p.name,
            "sha256": sha256_file(p),
            "fired_events": [[int(i), float(t)] for i, t in trace.fired_events],
            **meta,
        }
    return write_json({"traces": entries}, out_dir / "manifest.json")


# -- histogram / staircase --------------------------------------------------------


def write_histogram_csv(hist: AmplitudeHistogram, path) -> Path:
    """One row per left edge with its count; the closing edge has an empty count."""
    rows = [(e, int(c)) for e, c in zip(hist.bin_edges[:-1], hist.counts)]
    rows.append((hist.bin_edges[-1], ""))
    return write_table(path, ["edge_v", "count"], rows)


def read_histogram_csv(path) -> AmplitudeHistogram:
    rows = read_table(path, ["edge_v", "count"])
    edges = np.array([float(r[0]) for r in rows])
    counts = np.array([float(r[1]) for r in rows[:-1]])
    return AmplitudeHistogram(edges, counts, int(round(counts.sum())))


def write_staircase_csv(st: ThresholdStaircase, path) -> Path:
    return write_table(path, ["level_v", "count"], zip(st.levels, st.counts))


def read_staircase_csv(path) -> ThresholdStaircase:
    data = np.array(read_table(path, ["level_v", "count"]), dtype=float).reshape(-1, 2)
    return ThresholdStaircase(data[:, 0], data[:, 1])


# -- mixture / blocks ---------------------------------------------------------------


def mixture_to_dict(g: GaussianMixture) -> Dict:
    return {
        "units": "V",
        "components": [
            {"photon_number": j + 1, "mean_v": m, "sigma_v": s, "weight": w}
            for j, (m, s, w) in enumerate(g.components)
        ],
    }


def mixture_from_dict(d: Dict) -> GaussianMixture:
    if d.get("units") != "V":
        raise DomainError("mixture must be stored in volts")
    comps = sorted(d["components"], key=lambda c: c["photon_number"])
    return GaussianMixture(
        [c["mean_v"] for c in comps],
        [c["sigma_v"] for c in comps],
        [c["weight"] for c in comps],
    )


def blocks_to_dict(b: VoltageBlocks) -> Dict:
    return {"units": "V", "boundaries_v": [float(v) for v in b.boundaries]}


def blocks_from_dict(d: Dict) -> VoltageBlocks:
    if d.get("units") != "V":
        raise DomainError("blocks must be stored in volts")
    return VoltageBlocks(d["boundaries_v"])


# -- fidelity matrix --------------------------------------------------------------


def write_matrix_csv(E, path) -> Path:
    """Matrix CSV whose first row and column hold the integer row/column indices."""
    E = np.asarray(E, dtype=float)
    header = [""] + [str(m) for m in range(E.shape[1])]
    return write_table(path, header, ([n, *row] for n, row in enumerate(E)))


def _parse_matrix(rows: List[List[str]]) -> np.ndarray:
    if len(rows) < 2:
        raise DomainError("matrix file needs a header row and at least one data row")
    try:
        cols = [int(c) for c in rows[0][1:]]
        row_idx = [int(r[0]) for r in rows[1:]]
        if any(len(r) != len(cols) + 1 for r in rows[1:]):
            raise DomainError("ragged matrix file")
        E = np.array([[float(v) for v in r[1:]] for r in rows[1:]])
    except ValueError as exc:
        raise DomainError(f"malformed matrix file: {exc}") from exc
    if cols != list(range(len(cols))) or row_idx != list(range(len(row_idx))):
        raise DomainError("matrix headers must count up from 0")
    return E


def read_matrix_csv(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return _parse_matrix(list(csv.reader(fh)))


def write_fidelity_csv(P, path) -> Path:
    """Rows are clicks, columns photons; the first row and column hold the integer indices."""
    return write_matrix_csv(P.entries if isinstance(P, FidelityMatrix) else P, path)


def read_fidelity_csv(path) -> FidelityMatrix:
    return FidelityMatrix(read_matrix_csv(path))


def measured_fidelity_matrix() -> FidelityMatrix:
    """Measured 7 x 7 fidelity matrix of a 32-pixel device (photon numbers 0..6), bundled as data."""
    text = resources.files("pnrdet").joinpath("data/measured_fidelity.csv").read_text()
    return FidelityMatrix(_parse_matrix(list(csv.reader(text.splitlines()))))
