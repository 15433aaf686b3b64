"""Command-line entry point: ``pnrdet <command> [options]``.

Exit status is 0 on success, 1 when a stage or check fails and 2 for
configuration or usage errors.
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace
from pathlib import Path
from typing import List, Optional

import numpy as np

from .errors import ConfigError, DomainError, StageError
from .io import measured_fidelity_matrix, read_matrix_csv, write_fidelity_csv
from .pipeline import FIGURES, STAGES, RunConfig, RunReport, emit_plot_data, load_config, run
from .statistics import ideal_fidelity, poisson_input_matrix
from .tomography import ClickCountMatrix, hellinger, reconstruct_input_state, reconstruct_povm

EXIT_OK, EXIT_FAIL, EXIT_CONFIG = 0, 1, 2


def _base_config(args) -> RunConfig:
    cfg = load_config(args.config) if args.config else RunConfig()
    changes = {}
    if getattr(args, "seed", None) is not None:
        changes["seed"] = args.seed
    if getattr(args, "out", None) is not None:
        changes["output_dir"] = args.out
    if getattr(args, "stages", None):
        changes["stages"] = tuple(s.strip() for s in args.stages.split(",") if s.strip())
    return replace(cfg, **changes) if changes else cfg


def cmd_run(args) -> int:
    cfg = _base_config(args)
    report = run(cfg)
    for stage, status in report.status.items():
        print(f"{stage:16s} {status}")
    print(f"report: {Path(cfg.output_dir) / 'report.json'}")
    return EXIT_OK if report.succeeded else EXIT_FAIL


def cmd_plot(args) -> int:
    out = args.out if args.out is not None else _base_config(args).output_dir
    report = RunReport.load(out)
    figures = args.figure or list(FIGURES)
    code = EXIT_OK
    for fig in figures:
        try:
            print(emit_plot_data(report, fig))
        except StageError as exc:
            print(f"{fig}: {exc}", file=sys.stderr)
            code = EXIT_FAIL
    return code


def cmd_fidelity(args) -> int:
    det = load_config(args.config).detector if args.config else RunConfig().detector
    n_pix = args.pixels if args.pixels is not None else det.n_pixels
    eta = args.efficiency if args.efficiency is not None else det.efficiency
    hi = args.n_max if args.n_max is not None else min(n_pix - 1, 8)
    print("n,fidelity")
    for n in range(args.n_min, hi + 1):
        print(f"{n},{ideal_fidelity(n, n_pix, eta):.6f}")
    return EXIT_OK


def cmd_tomography(args) -> int:
    if args.mus:
        mus = [float(x) for x in args.mus.split(",")]
        I = poisson_input_matrix(mus, args.m_max).entries
    elif args.probes:
        I = read_matrix_csv(args.probes)
    else:
        raise ConfigError("give the probe matrix with --probes or the probe means with --mus")
    O = read_matrix_csv(args.clicks)
    if args.counts:
        O = ClickCountMatrix(O, O.sum(axis=0) if args.totals is None else np.full(O.shape[1], float(args.totals)))
    P = reconstruct_povm(I, O, n_click_max=args.n_click_max, max_iters=args.max_iters)
    dest = Path(args.out) if args.out else Path("fidelity_matrix.csv")
    write_fidelity_csv(P, dest)
    print(f"residual {P.residual:.6g}, iterations {P.iterations}, converged {P.converged}")
    print(dest)
    return EXIT_OK if P.converged else EXIT_FAIL


def _check(label: str, ok: bool, detail: str) -> bool:
    print(f"{'PASS' if ok else 'FAIL'}  {label}: {detail}")
    return ok


def cmd_validate(args) -> int:
    P = measured_fidelity_matrix()
    E = P.entries
    ok = True
    ok &= _check("shape", E.shape == (7, 7), f"{E.shape}")
    ok &= _check("non-negative", bool(np.all(E >= 0)), f"min {E.min():.3g}")
    ok &= _check("no clicks above photon number", bool(np.all(np.tril(E, -1) == 0)), "entries with n > m are zero")
    dev = np.abs(E.sum(axis=0) - 1).max()
    # tabulated to three decimals, so columns only sum to 1 within rounding
    ok &= _check("column sums", dev <= 7 * 0.0005, f"max deviation {dev:.4f}")
    ideal = np.array([ideal_fidelity(n, 32, 0.975) for n in range(1, 7)])
    diag = E.diagonal()[1:]
    ok &= _check("ideal bound", bool(np.all(ideal >= diag - 5e-4)), "uniform 32-pixel model is not below the measured diagonal")
    p = poisson_input_matrix([1.0], 6).entries[:, 0]
    p = p / p.sum()
    got = reconstruct_input_state(E, E @ p)
    err = np.abs(got.probs - p).max()
    ok &= _check("state round trip", err < 1e-3, f"max error {err:.2e}, H = {hellinger(got, p):.2e}")
    return EXIT_OK if ok else EXIT_FAIL


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="pnrdet", description="Multiplexed photon-number-resolving detector toolkit.")
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, run_flags=True):
        p.add_argument("--config", help="run configuration file (flat key = value lines)")
        if run_flags:
            p.add_argument("--seed", type=int, help="root seed, overrides the config")
            p.add_argument("--out", help="output directory, overrides the config")
            p.add_argument("--stages", help=f"comma-separated subset of {','.join(STAGES)}")

    p = sub.add_parser("run", help="execute a pipeline run")
    common(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("plot", help="write plot-ready CSV tables from a finished run")
    common(p)
    p.add_argument("--figure", action="append", choices=FIGURES, help="figure to emit (repeatable; default all)")
    p.set_defaults(func=cmd_plot)

    p = sub.add_parser("fidelity", help="ideal multiplexed fidelity table")
    common(p, run_flags=False)
    p.add_argument("--pixels", type=int, default=None, help="number of pixels (default 32)")
    p.add_argument("--efficiency", type=float, default=None, help="per-photon efficiency (default 0.975)")
    p.add_argument("--n-min", type=int, default=1)
    p.add_argument("--n-max", type=int, default=None)
    p.set_defaults(func=cmd_fidelity)

    p = sub.add_parser("tomography", help="reconstruct a fidelity matrix from probe and click CSV files")
    common(p, run_flags=False)
    p.add_argument("--probes", help="probe matrix CSV (rows photon number, columns probe)")
    p.add_argument("--mus", help="comma-separated probe means, instead of --probes")
    p.add_argument("--m-max", type=int, default=12, help="photon-number cutoff with --mus")
    p.add_argument("--clicks", required=True, help="click matrix CSV (rows clicks, columns probe)")
    p.add_argument("--counts", action="store_true", help="click file holds counts rather than frequencies")
    p.add_argument("--totals", type=float, help="pulses per probe when --counts omits some events")
    p.add_argument("--n-click-max", type=int, default=None)
    p.add_argument("--max-iters", type=int, default=50_000)
    p.add_argument("--out", help="output CSV (default fidelity_matrix.csv)")
    p.set_defaults(func=cmd_tomography)

    p = sub.add_parser("validate", help="consistency checks on the bundled measured fidelity matrix")
    p.set_defaults(func=cmd_validate)
    return ap


def main(argv: Optional[List[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (DomainError, StageError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
