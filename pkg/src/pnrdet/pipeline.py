"""End-to-end batch runs: simulate, read out, reconstruct and report.

A run is described by :class:`RunConfig`, stored on disk as flat
``section.key = value`` lines (a subset of TOML)::

    seed = 7
    pulses_per_probe = 100000
    stages = ["simulate", "readout", "tomography"]
    detector.n_pixels = 32
    detector.beam_profile = "gaussian"
    detector.beam_sigma_fraction = 0.5
    circuit.amplifier_noise_rms = 0.003

Values are integers, floats, booleans, double-quoted strings, or
one-line lists of those.  Unknown keys are rejected.

Randomness comes from the root ``seed`` only: every random draw uses
``SeedSequence([seed, crc32(stage label), index])``, so results do not
depend on execution order.
"""

from __future__ import annotations

import json
import sys
import zlib
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple

import numpy as np

from .circuit import CircuitParams, amplitude_map, jitter_fwhm, simulate_pulse
from .errors import ConfigError, DomainError, StageError
from .io import (
    blocks_to_dict,
    mixture_to_dict,
    sha256_file,
    write_fidelity_csv,
    write_histogram_csv,
    write_json,
    write_matrix_csv,
    write_staircase_csv,
    write_table,
    write_trace_batch,
)
from .readout import (
    assignment_probability,
    build_histogram,
    sample_amplitudes,
    select_component_count,
    staircase_from_amplitudes,
    staircase_to_distribution,
    voltage_blocks,
)
from .statistics import (
    DetectorArrayConfig,
    GaussianSpot,
    Uniform,
    ideal_fidelity,
    poisson_input_matrix,
    sample_click_dataset,
)
from .tomography import (
    ClickCountMatrix,
    crosstalk_probability,
    estimate_crosstalk_stats,
    hellinger,
    reconstruct_input_state,
    reconstruct_povm,
)

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

__all__ = [
    "STAGES",
    "FIGURES",
    "RunConfig",
    "RunReport",
    "derive_seed",
    "parse_config",
    "serialize_config",
    "load_config",
    "run",
    "emit_plot_data",
]

STAGES = ("simulate", "readout", "tomography", "crosstalk", "fidelity-report")
FIGURES = ("amplitude_map", "histogram", "assignment_prob", "staircase", "fidelity_heatmap", "hellinger_vs_mu", "jitter_vs_n")

DEFAULT_MUS = tuple(round(0.1 * k, 10) for k in range(1, 51))
MEASURED_DIAGONAL = (1.0, 0.975, 0.874, 0.734, 0.405, 0.271, 0.215)


def derive_seed(root: int, stage: str, index: int = 0) -> int:
    """64-bit seed for draw ``index`` of ``stage``."""
    ss = np.random.SeedSequence([int(root), zlib.crc32(stage.encode()), int(index)])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class RunConfig:
    detector: DetectorArrayConfig = field(default_factory=DetectorArrayConfig)
    circuit: CircuitParams = field(default_factory=CircuitParams)
    probe_mus: Tuple[float, ...] = DEFAULT_MUS
    pulses_per_probe: int = 100_000
    seed: int = 0
    output_dir: str = "run"
    stages: Tuple[str, ...] = STAGES
    m_max: int = 12
    n_click_max: Optional[int] = None
    # readout
    readout_sqrt_growth: bool = False
    readout_n_bins: int = 100
    readout_level_pitch: float = 1e-3
    # tomography
    tomography_source: str = "readout"
    tomography_tol: float = 1e-10
    tomography_max_iters: int = 50_000
    # crosstalk
    crosstalk_mu: float = 0.01
    crosstalk_pulses: int = 1_000_000
    crosstalk_pulse_frequency: float = 100e3
    # jitter and example traces
    jitter_photon_numbers: Tuple[int, ...] = (1, 2, 8, 32)
    jitter_trials: int = 1000
    trace_photon_numbers: Tuple[int, ...] = (1, 2, 3, 4)

    def __post_init__(self):
        object.__setattr__(self, "probe_mus", tuple(float(m) for m in self.probe_mus))
        object.__setattr__(self, "stages", tuple(self.stages))
        object.__setattr__(self, "jitter_photon_numbers", tuple(int(n) for n in self.jitter_photon_numbers))
        object.__setattr__(self, "trace_photon_numbers", tuple(int(n) for n in self.trace_photon_numbers))
        if not self.stages:
            raise ConfigError("stages must not be empty")
        bad = [s for s in self.stages if s not in STAGES]
        if bad:
            raise ConfigError(f"unknown stages {bad}; choose from {', '.join(STAGES)}")
        if int(self.pulses_per_probe) != self.pulses_per_probe or self.pulses_per_probe < 1:
            raise ConfigError("pulses_per_probe must be an integer >= 1")
        if not self.probe_mus or min(self.probe_mus) < 0:
            raise ConfigError("probe_mus must be a non-empty list of non-negative values")
        if self.detector.n_pixels != self.circuit.n_pixels:
            raise ConfigError(f"detector.n_pixels ({self.detector.n_pixels}) and circuit.n_pixels ({self.circuit.n_pixels}) differ")
        if self.m_max < 1:
            raise ConfigError("m_max must be >= 1")
        if self.n_click_max is not None and not 1 <= self.n_click_max <= self.m_max:
            raise ConfigError("n_click_max must lie in [1, m_max]")
        if self.tomography_source not in ("readout", "clicks"):
            raise ConfigError('tomography.source must be "readout" or "clicks"')
        if self.crosstalk_pulses < 1 or self.jitter_trials < 1:
            raise ConfigError("crosstalk.pulses and jitter.trials must be positive")

    @property
    def clicks_max(self) -> int:
        return self.n_click_max if self.n_click_max is not None else min(self.m_max, self.detector.n_pixels)


# -- config text format -------------------------------------------------------------

# section -> keys; the RunConfig attribute is "<section>_<key>"
_SECTIONED = {
    "readout": ("sqrt_growth", "n_bins", "level_pitch"),
    "tomography": ("source", "tol", "max_iters"),
    "crosstalk": ("mu", "pulses", "pulse_frequency"),
    "jitter": ("photon_numbers", "trials"),
    "traces": ("photon_numbers",),
}
_TOP = ("seed", "pulses_per_probe", "output_dir", "stages", "probe_mus", "m_max", "n_click_max")


def _attr_for(section: str, key: str) -> str:
    if section == "traces":
        return "trace_photon_numbers"
    return f"{section}_{key}"


def _format_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if isinstance(v, str):
        return json.dumps(v)
    if isinstance(v, (list, tuple)):
        return "[" + ", ".join(_format_value(x) for x in v) + "]"
    raise ConfigError(f"cannot serialise {v!r}")


def _detector_items(d: DetectorArrayConfig) -> List[Tuple[str, Any]]:
    items = [("n_pixels", d.n_pixels), ("efficiency", d.efficiency)]
    if isinstance(d.beam_profile, GaussianSpot):
        items += [("beam_profile", "gaussian"), ("beam_sigma_fraction", d.beam_profile.sigma_fraction)]
    else:
        items.append(("beam_profile", "uniform"))
    items += [("dark_count_prob", d.dark_count_prob), ("crosstalk_prob", d.crosstalk_prob)]
    return items


def serialize_config(cfg: RunConfig) -> str:
    """Config as flat ``key = value`` lines, every field written explicitly."""
    lines = []
    for key in _TOP:
        v = getattr(cfg, key)
        if v is not None:
            lines.append(f"{key} = {_format_value(v)}")
    for key, v in _detector_items(cfg.detector):
        lines.append(f"detector.{key} = {_format_value(v)}")
    for f in fields(CircuitParams):
        lines.append(f"circuit.{f.name} = {_format_value(getattr(cfg.circuit, f.name))}")
    for section, keys in _SECTIONED.items():
        for key in keys:
            lines.append(f"{section}.{key} = {_format_value(getattr(cfg, _attr_for(section, key)))}")
    return "\n".join(lines) + "\n"


def parse_config(text: str) -> RunConfig:
    """Inverse of :func:`serialize_config`; missing keys take their defaults."""
    try:
        doc = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config syntax error: {exc}") from exc
    doc = dict(doc)
    kwargs: Dict[str, Any] = {}
    try:
        det = dict(doc.pop("detector", {}))
        profile = det.pop("beam_profile", "uniform")
        sigma = det.pop("beam_sigma_fraction", None)
        if profile == "gaussian":
            if sigma is None:
                raise ConfigError("detector.beam_profile = \"gaussian\" needs detector.beam_sigma_fraction")
            det["beam_profile"] = GaussianSpot(float(sigma))
        elif profile == "uniform":
            det["beam_profile"] = Uniform()
        else:
            raise ConfigError(f"unknown beam profile {profile!r}")
        _check_keys("detector", det, {f.name for f in fields(DetectorArrayConfig)})
        kwargs["detector"] = DetectorArrayConfig(**det)

        circ = dict(doc.pop("circuit", {}))
        _check_keys("circuit", circ, {f.name for f in fields(CircuitParams)})
        circ = {k: (float(v) if isinstance(v, int) and not isinstance(v, bool) and k != "n_pixels" else v) for k, v in circ.items()}
        kwargs["circuit"] = CircuitParams(**circ)

        for section, keys in _SECTIONED.items():
            sub = doc.pop(section, {})
            if not isinstance(sub, dict):
                raise ConfigError(f"{section} must be a section")
            _check_keys(section, sub, set(keys))
            for key, v in sub.items():
                kwargs[_attr_for(section, key)] = v

        _check_keys("top level", doc, set(_TOP))
        kwargs.update(doc)
        return RunConfig(**kwargs)
    except DomainError as exc:
        raise ConfigError(str(exc)) from exc
    except TypeError as exc:
        raise ConfigError(f"bad config value: {exc}") from exc


def _check_keys(where: str, got: Dict, allowed: set) -> None:
    extra = sorted(set(got) - allowed)
    if extra:
        raise ConfigError(f"unknown {where} keys: {', '.join(extra)}")


def load_config(path) -> RunConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text)


# -- report -------------------------------------------------------------------------


@dataclass
class RunReport:
    """What a run did: the config it ran, each stage's status, key numbers, and file digests."""

    config: RunConfig
    output_dir: Path
    status: Dict[str, str] = field(default_factory=dict)
    metrics: Dict[str, Any] = field(default_factory=dict)
    manifest: Dict[str, str] = field(default_factory=dict)

    @property
    def succeeded(self) -> bool:
        return all(v in ("ok", "skipped") for v in self.status.values())

    def record(self, path: Path) -> Path:
        self.manifest[path.relative_to(self.output_dir).as_posix()] = sha256_file(path)
        return path

    def verify_manifest(self) -> List[str]:
        """Files that are missing or whose digest no longer matches."""
        bad = []
        for rel, digest in self.manifest.items():
            p = self.output_dir / rel
            if not p.is_file() or sha256_file(p) != digest:
                bad.append(rel)
        return bad

    def to_dict(self) -> Dict:
        return {
            "config": serialize_config(self.config).splitlines(),
            "status": self.status,
            "metrics": self.metrics,
            "manifest": self.manifest,
        }

    def write(self) -> Path:
        return write_json(self.to_dict(), self.output_dir / "report.json")

    @classmethod
    def load(cls, out_dir) -> "RunReport":
        out_dir = Path(out_dir)
        try:
            d = json.loads((out_dir / "report.json").read_text())
        except (OSError, ValueError) as exc:
            raise ConfigError(f"no readable report.json in {out_dir}: {exc}") from exc
        cfg = parse_config("\n".join(d["config"]) + "\n")
        return cls(config=cfg, output_dir=out_dir, status=d["status"], metrics=d["metrics"], manifest=d["manifest"])


# -- stages --------------------------------------------------------------------------

_NEEDS = {
    "simulate": (),
    "readout": ("simulate",),
    "tomography": ("simulate",),
    "crosstalk": (),
    "fidelity-report": ("tomography",),
}


def _resolve_stages(cfg: RunConfig) -> List[str]:
    want = set(cfg.stages)
    changed = True
    while changed:
        changed = False
        for s in list(want):
            needs = set(_NEEDS[s])
            if s == "tomography" and cfg.tomography_source == "readout":
                needs.add("readout")
            if not needs <= want:
                want |= needs
                changed = True
    return [s for s in STAGES if s in want]


class _Run:
    def __init__(self, cfg: RunConfig, report: RunReport):
        self.cfg = cfg
        self.report = report
        self.out = report.output_dir
        self.datasets = None
        self.amp_map = None
        self.O_readout = None
        self.P = None

    def path(self, rel: str) -> Path:
        p = self.out / rel
        p.parent.mkdir(parents=True, exist_ok=True)
        return p

    def keep(self, p: Path) -> Path:
        return self.report.record(p)

    # simulate ------------------------------------------------------------------
    def simulate(self):
        cfg = self.cfg
        self.datasets = [
            sample_click_dataset(cfg.detector, mu, cfg.pulses_per_probe, seed=derive_seed(cfg.seed, "simulate", k))
            for k, mu in enumerate(cfg.probe_mus)
        ]
        n = cfg.detector.n_pixels
        rows = []
        for k, d in enumerate(self.datasets):
            hist = np.bincount(d.clicked_pixels, minlength=n + 1)
            rows += [(k, d.mu, c, int(hist[c])) for c in range(n + 1)]
        self.keep(write_table(self.path("simulate/click_counts.csv"), ["probe", "mu", "clicks", "count"], rows))

        quiet = replace(cfg.circuit, amplifier_noise_rms=0.0)
        self.amp_map = amplitude_map(quiet, n)
        self.keep(write_table(self.path("simulate/amplitude_map.csv"), ["fired_pixels", "amplitude_v"], zip(range(1, n + 1), self.amp_map)))

        traces = []
        for j, k in enumerate(cfg.trace_photon_numbers):
            events = [(i, 1e-9) for i in range(k)]
            s = derive_seed(cfg.seed, "trace", j)
            traces.append((f"trace_n{k}", simulate_pulse(cfg.circuit, events, seed=s), {"seed": s, "events": [[i, t] for i, t in events]}))
        manifest = write_trace_batch(traces, self.path("simulate/traces"))
        for name, _, _ in traces:
            self.keep(self.out / "simulate/traces" / f"{name}.csv")
        self.keep(manifest)

        jit = []
        for j, k in enumerate(cfg.jitter_photon_numbers):
            r = jitter_fwhm(cfg.circuit, k, n_trials=cfg.jitter_trials, seed=derive_seed(cfg.seed, "jitter", j))
            jit.append((k, r.fwhm))
        self.keep(write_table(self.path("simulate/jitter.csv"), ["n", "fwhm_s"], jit))

        self.report.metrics["amplitude_map_v"] = [float(a) for a in self.amp_map]
        self.report.metrics["jitter_fwhm_s"] = {str(k): float(f) for k, f in jit}
        self.report.metrics["pulses"] = {str(k): int(d.n_pulses) for k, d in enumerate(self.datasets)}

    # readout ---------------------------------------------------------------------
    def readout(self):
        cfg = self.cfg
        sigma = cfg.circuit.amplifier_noise_rms
        n_max = self.cfg.clicks_max
        amps = [
            sample_amplitudes(self.amp_map, d.clicked_pixels, sigma, np.random.default_rng(derive_seed(cfg.seed, "readout", k)), cfg.readout_sqrt_growth)
            for k, d in enumerate(self.datasets)
        ]
        fit_probe = int(np.argmax(cfg.probe_mus))
        if amps[fit_probe].size < 2:
            raise StageError("readout needs triggered pulses at the largest probe mean")
        hist = build_histogram(amps[fit_probe], cfg.readout_n_bins)
        mixture = select_component_count(hist, float(self.amp_map[0]))
        blocks = voltage_blocks(mixture).extended(n_max)
        self.keep(write_histogram_csv(hist, self.path("readout/histogram.csv")))
        self.keep(write_json(mixture_to_dict(mixture), self.path("readout/mixture.json")))
        self.keep(write_json(blocks_to_dict(blocks), self.path("readout/blocks.json")))
        acc = assignment_probability(mixture, blocks)
        self.keep(write_table(self.path("readout/assignment_probability.csv"), ["n", "probability"], zip(range(1, acc.size + 1), acc)))

        O = np.zeros((n_max + 1, len(amps)))
        for k, a in enumerate(amps):
            st = staircase_from_amplitudes(a, cfg.readout_level_pitch, top=float(blocks.boundaries[-1]))
            self.keep(write_staircase_csv(st, self.path(f"readout/staircases/probe_{k:03d}.csv")))
            counts = staircase_to_distribution(st, blocks)
            # classes above n_max are dropped, as for click-level counts
            O[1:, k] = counts[:n_max]
            O[0, k] = self.datasets[k].n_pulses - counts.sum()
        self.O_readout = ClickCountMatrix(np.maximum(O, 0.0), np.array([d.n_pulses for d in self.datasets], dtype=float))
        self.keep(write_matrix_csv(self.O_readout.entries, self.path("readout/click_count_matrix.csv")))
        self.report.metrics["mixture_components"] = mixture.k
        self.report.metrics["assignment_probability"] = [float(p) for p in acc]

    # tomography ---------------------------------------------------------------------
    def tomography(self):
        cfg = self.cfg
        n_max = cfg.clicks_max
        I = poisson_input_matrix(cfg.probe_mus, cfg.m_max)
        O = self.O_readout if cfg.tomography_source == "readout" else ClickCountMatrix.from_datasets(self.datasets, n_max)
        P = reconstruct_povm(I, O, n_click_max=n_max, tol=cfg.tomography_tol, max_iters=cfg.tomography_max_iters)
        violations = P.constraint_violations()
        if violations:
            raise StageError("reconstructed fidelity matrix breaks its constraints: " + "; ".join(violations))
        self.P = P
        self.keep(write_fidelity_csv(P, self.path("tomography/fidelity_matrix.csv")))

        F = O.frequencies()
        rows = []
        for k, mu in enumerate(cfg.probe_mus):
            expected = I.entries[:, k] / I.entries[:, k].sum()
            got = reconstruct_input_state(P, F[:, k])
            rows.append((mu, hellinger(got, expected)))
        self.keep(write_table(self.path("tomography/hellinger.csv"), ["mu", "H"], rows))
        self.report.metrics["fidelity_diagonal"] = [float(v) for v in P.diagonal()]
        self.report.metrics["tomography"] = {
            "converged": bool(P.converged),
            "iterations": int(P.iterations),
            "residual": float(P.residual),
            "source": cfg.tomography_source,
        }
        self.report.metrics["hellinger"] = {repr(mu): float(h) for mu, h in rows}

    # crosstalk ----------------------------------------------------------------------
    def crosstalk(self):
        cfg = self.cfg
        data = sample_click_dataset(cfg.detector, cfg.crosstalk_mu, cfg.crosstalk_pulses, seed=derive_seed(cfg.seed, "crosstalk"))
        stats = estimate_crosstalk_stats(data, cfg.crosstalk_pulse_frequency)
        out = {**asdict(stats), "p_xtalk": crosstalk_probability(stats), "n_pulses": cfg.crosstalk_pulses}
        self.keep(write_json(out, self.path("crosstalk/stats.json")))
        self.report.metrics["p_xtalk"] = out["p_xtalk"]

    # fidelity report ------------------------------------------------------------------
    def fidelity_report(self):
        cfg = self.cfg
        n_pix, eta = cfg.detector.n_pixels, cfg.detector.efficiency
        diag = self.P.diagonal()
        rows = []
        for n in range(1, diag.size):
            ideal = ideal_fidelity(n, n_pix, eta) if n < n_pix else float("nan")
            measured = MEASURED_DIAGONAL[n] if n < len(MEASURED_DIAGONAL) else ""
            rows.append((n, ideal, diag[n], measured))
        self.keep(write_table(self.path("report/fidelity.csv"), ["n", "ideal", "reconstructed", "measured"], rows))


def run(config: RunConfig, output_dir=None) -> RunReport:
    """Execute the configured stages (and anything they depend on) in order.

    A failing stage stops the run; the report written to ``report.json``
    then shows which stages completed.
    """
    out = Path(output_dir if output_dir is not None else config.output_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        probe = out / ".write-test"
        probe.write_text("")
        probe.unlink()
    except OSError as exc:
        raise ConfigError(f"output directory {out} is not writable: {exc}") from exc

    report = RunReport(config=config, output_dir=out)
    runner = _Run(config, report)
    stages = _resolve_stages(config)
    for s in STAGES:
        report.status[s] = "pending" if s in stages else "skipped"
    for s in stages:
        try:
            getattr(runner, s.replace("-", "_"))()
        except Exception as exc:
            report.status[s] = f"failed: {type(exc).__name__}: {exc}"
            break
        report.status[s] = "ok"
    for s, v in report.status.items():
        if v == "pending":
            report.status[s] = "not run"
    report.write()
    return report


# -- plot data ----------------------------------------------------------------------

_FIGURE_SOURCE = {
    "amplitude_map": ("simulate", "simulate/amplitude_map.csv"),
    "histogram": ("readout", "readout/histogram.csv"),
    "assignment_prob": ("readout", "readout/assignment_probability.csv"),
    "staircase": ("readout", None),
    "fidelity_heatmap": ("tomography", "tomography/fidelity_matrix.csv"),
    "hellinger_vs_mu": ("tomography", "tomography/hellinger.csv"),
    "jitter_vs_n": ("simulate", "simulate/jitter.csv"),
}


def emit_plot_data(report: RunReport, figure: str) -> Path:
    """Write ``plots/<figure>.csv`` from the run's stage output and return its path.

    The staircase figure uses the probe with the largest mean photon number.
    """
    if figure not in _FIGURE_SOURCE:
        raise DomainError(f"unknown figure {figure!r}; choose from {', '.join(FIGURES)}")
    stage, rel = _FIGURE_SOURCE[figure]
    if report.status.get(stage) != "ok":
        raise StageError(f"figure {figure} needs the {stage} stage; run it first")
    if rel is None:
        rel = f"readout/staircases/probe_{int(np.argmax(report.config.probe_mus)):03d}.csv"
    src = report.output_dir / rel
    if not src.is_file():
        raise StageError(f"{rel} is missing; rerun the {stage} stage")
    dst = report.output_dir / "plots" / f"{figure}.csv"
    dst.parent.mkdir(parents=True, exist_ok=True)
    dst.write_bytes(src.read_bytes())
    return dst
