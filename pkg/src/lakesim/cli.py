"""Command-line entry point: ``lakesim <subcommand> --config FILE``."""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

import numpy as np

from . import experiments as ex
from .config import ConfigError, help_text, load_config
from .io import format_rows, read_snapshot, write_snapshot, write_table_csv
from .noise import BrownianPath, validate_basis
from .weighted import weighted_div_residual

EXIT_OK, EXIT_CHECK_FAILED, EXIT_USAGE = 0, 1, 2
SUBCOMMANDS = ("run", "invariants", "cascade", "continuity", "validate-noise", "solve-stream")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="lakesim",
        description="Stochastic lake-equation vorticity simulator and invariant harness.",
        epilog="configuration keys:\n" + help_text(),
        formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", metavar="{" + ",".join(SUBCOMMANDS) + "}")
    sub.required = True
    for name in SUBCOMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="key = value configuration file")
        p.add_argument("--seed", type=int, help="override the configured seed")
        p.add_argument("--out", help="output directory (default: stdout)")
        p.add_argument("-v", "--verbose", action="store_true")
        if name == "run":
            p.add_argument("--initial-snapshot", help="start from the first field of this snapshot")
            p.add_argument("--brownian", help="drive the run with this Brownian table")
        if name == "continuity":
            p.add_argument("--epsilon", type=float, help="override the configured epsilon")
    return parser


def _emit(args, cfg, filename, text):
    out = args.out or cfg.out
    if out:
        os.makedirs(out, exist_ok=True)
        with open(os.path.join(out, filename), "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    else:
        sys.stdout.write(text)


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True, default=float) + "\n"


def cmd_run(args, cfg):
    setup = ex.build_setup(cfg)
    omega0 = None
    if args.initial_snapshot:
        _, fields = read_snapshot(args.initial_snapshot)
        omega0 = fields[0]
    if args.brownian:
        path = BrownianPath.read(args.brownian)
    else:
        path = ex.brownian_path(cfg, setup.basis.m)
    if omega0 is None:
        omega0 = ex.initial_vorticity(cfg, setup)
    res = ex.run_single(cfg, setup=setup, path=path, omega0=omega0)
    _emit(args, cfg, "diagnostics.csv", format_rows(res.rows))
    out = args.out or cfg.out
    if out:
        write_snapshot(os.path.join(out, "initial.lsf"), omega0, 0.0)
        write_snapshot(os.path.join(out, "final.lsf"), res.final.omega, res.final.t)
        path.write(os.path.join(out, "brownian.lsw"))
    return EXIT_OK


def cmd_invariants(args, cfg):
    report = ex.run_invariant_suite(cfg)
    _emit(args, cfg, "invariants.json", _json(report.as_dict()))
    for name in report.failures:
        print(f"FAILED: {name}", file=sys.stderr)
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_cascade(args, cfg):
    if cfg.n_max < 3:
        print(f"lakesim: error: n_max: the convergence study needs at least 3 levels, "
              f"got {cfg.n_max}", file=sys.stderr)
        return EXIT_USAGE
    table = ex.experiment_viscous_convergence(cfg)
    out = args.out or cfg.out
    if out:
        os.makedirs(out, exist_ok=True)
        fh = open(os.path.join(out, "cascade.csv"), "w", encoding="utf-8", newline="\n")
    else:
        fh = sys.stdout
    try:
        write_table_csv(fh, ("n", "nu_n", "nu_next", "gap"), table.levels)
    finally:
        if fh is not sys.stdout:
            fh.close()
    if not table.trend_ok:
        print(f"FAILED: cascade trend (worst ratio {table.worst_ratio:.4g})", file=sys.stderr)
    return EXIT_OK if table.trend_ok else EXIT_CHECK_FAILED


def cmd_continuity(args, cfg):
    result = ex.experiment_ic_continuity(cfg, epsilon=args.epsilon)
    _emit(args, cfg, "continuity.json", _json(result.as_dict()))
    return EXIT_OK if result.passed else EXIT_CHECK_FAILED


def cmd_validate_noise(args, cfg):
    setup = ex.build_setup(cfg)
    report = validate_basis(setup.basis, setup.bath, k=cfg.k)
    _emit(args, cfg, "noise.json", _json(report.as_dict()))
    return EXIT_OK if report.passed else EXIT_CHECK_FAILED


def cmd_solve_stream(args, cfg):
    setup = ex.build_setup(cfg)
    omega = ex.initial_vorticity(cfg, setup)
    u, psi, rep = setup.op.velocity_from_vorticity(omega, tol=cfg.tol)
    info = {"iterations": rep.iterations, "final_relative_residual": rep.final_relative_residual,
            "converged": bool(rep.converged), "closure_residual": rep.closure_residual,
            "div_residual": weighted_div_residual(u, setup.bath)}
    _emit(args, cfg, "solve.json", _json(info))
    out = args.out or cfg.out
    if out:
        write_snapshot(os.path.join(out, "stream.lsf"), np.stack([omega, psi, u[0], u[1]]), 0.0)
    return EXIT_OK


COMMANDS = {"run": cmd_run, "invariants": cmd_invariants, "cascade": cmd_cascade,
            "continuity": cmd_continuity, "validate-noise": cmd_validate_noise,
            "solve-stream": cmd_solve_stream}


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.with_overrides(seed=args.seed)
    except (OSError, ConfigError) as exc:
        print(f"lakesim: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return COMMANDS[args.command](args, cfg)


if __name__ == "__main__":
    sys.exit(main())
