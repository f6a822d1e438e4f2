"""Command-line interface.

Subcommands: simulate (plant rollout), plan (open-loop solve), mpc
(closed-loop run), compare (open vs. closed over seeds plus a summary),
inner-demo (gain-error feedback optimization) and sai-demo (Legendre SAI
actuator). All take a JSON config; outputs are CSV files in the output
directory.

Exit codes: 0 success, 1 usage error, 2 configuration error, 3 numerical
failure.
"""

from __future__ import annotations

import argparse
import logging
import os
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import csvio
from .config import ConfigError, inner_demo_settings, parse_config, sai_demo_settings
from .harness import compare_seeds, make_reference, plan_nominal, run_closed_loop, run_open_loop
from .inner_loop import (
    InnerLoopConfig,
    ReferenceBox,
    default_sai_matrices,
    identity_actuator,
    make_sai_actuator,
    run_inner_loop,
)
from .model import IntegrationError, ays_rhs, simulate

log = logging.getLogger("hes_loop")

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3


class _Parser(argparse.ArgumentParser):
    """argparse exits with code 2 on usage errors; the CLI contract wants 1."""

    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USAGE)


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="hes-loop", description=__doc__.strip().splitlines()[0])
    parser.add_argument("--config", type=Path, required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", type=Path, default=None, help="output directory (default: config out_dir)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--seeds", type=str, default=None,
                        help="seed range N..M (compare only, inclusive)")
    parser.add_argument("--mode", choices=["open", "closed", "both"], default=None,
                        help="override the config run mode (compare only)")
    parser.add_argument("-v", "--verbose", action="count", default=0,
                        help="-v info, -vv debug")
    parser.add_argument("subcommand",
                        choices=["simulate", "plan", "mpc", "compare", "inner-demo", "sai-demo"])
    return parser


def _parse_seed_range(text: str) -> list[int]:
    try:
        lo, hi = text.split("..")
        lo, hi = int(lo), int(hi)
    except ValueError:
        raise ValueError(f"--seeds wants N..M, got {text!r}") from None
    if hi < lo:
        raise ValueError(f"--seeds range is empty: {text!r}")
    return list(range(lo, hi + 1))


def _worker_count(n_seeds: int) -> int:
    env = os.environ.get("HES_LOOP_THREADS")
    if env is not None:
        try:
            cap = int(env)
        except ValueError:
            raise ConfigError(f"HES_LOOP_THREADS must be an integer, got {env!r}") from None
        if cap < 1:
            raise ConfigError("HES_LOOP_THREADS must be >= 1")
        return min(cap, n_seeds)
    return min(4, n_seeds)


def cmd_simulate(config, out: Path) -> list[Path]:
    p_true = config.plant_params()
    traj = simulate(lambda x, u: ays_rhs(x, u, p_true), config.initial_state, config.u_ref,
                    config.step_h_yr, config.n_stages)
    return [csvio.write_rollout_csv(out / "rollout.csv", traj)]


def cmd_plan(config, out: Path) -> list[Path]:
    sol = plan_nominal(config)
    if not sol.converged:
        log.warning("open-loop solver did not converge: %s", sol.message)
    return [csvio.write_plan_csv(out / "plan.csv", sol.useq, config.step_h_yr)]


def cmd_mpc(config, out: Path) -> list[Path]:
    result = run_closed_loop(config)
    if not all(result.converged_flags):
        log.warning("%d of %d replans hit the solver cap",
                    sum(1 for f in result.converged_flags if not f), len(result.converged_flags))
    return [csvio.write_run_csv(out / f"closed_seed{config.seed}.csv", result)]


def cmd_compare(config, out: Path, seeds: list[int]) -> list[Path]:
    comparisons = compare_seeds(config, seeds, max_workers=_worker_count(len(seeds)))
    written = []
    for comp in comparisons:
        if comp.open is not None:
            written.append(csvio.write_run_csv(out / f"open_seed{comp.seed}.csv", comp.open))
        if comp.closed is not None:
            written.append(csvio.write_run_csv(out / f"closed_seed{comp.seed}.csv", comp.closed))
    written.append(csvio.write_summary_csv(out / "summary.csv", comparisons))
    return written


def cmd_inner_demo(config, out: Path) -> list[Path]:
    s = inner_demo_settings(config)
    box = ReferenceBox(tuple(float(v) for v in s["r_min"]), tuple(float(v) for v in s["r_max"]))
    actuator = identity_actuator(box, plant_gain=float(s["plant_gain"]))
    cfg = InnerLoopConfig(alpha=float(s["alpha"]),
                          step_size=None if s["step_size"] is None else float(s["step_size"]),
                          max_iters=int(s["max_iters"]), tol=float(s["tol"]))
    run = run_inner_loop(np.asarray(s["u_star"], dtype=float), np.asarray(s["r0"], dtype=float),
                         actuator, cfg)
    if not run.converged:
        log.warning("inner loop hit the iteration cap (%d iterations)", run.n_iters)
    return [csvio.write_iterates_csv(out / "inner_demo.csv", run)]


def cmd_sai_demo(config, out: Path) -> list[Path]:
    s = sai_demo_settings(config)
    phi_default, xi_default = default_sai_matrices()
    phi = phi_default if s["model_phi"] is None else np.asarray(s["model_phi"], dtype=float)
    xi = xi_default if s["model_xi"] is None else np.asarray(s["model_xi"], dtype=float)
    scale = float(s["plant_scale"])
    plant_phi = scale * phi if s["plant_phi"] is None else np.asarray(s["plant_phi"], dtype=float)
    plant_xi = scale * xi if s["plant_xi"] is None else np.asarray(s["plant_xi"], dtype=float)
    box = ReferenceBox(tuple(float(v) for v in s["r_min"]), tuple(float(v) for v in s["r_max"]))
    actuator = make_sai_actuator(phi, xi, plant_phi, plant_xi, box)
    if s["u_star"] is None:
        lo, hi = box.as_arrays()
        u_star = actuator.plant_behavior(lo + 0.25 * (hi - lo))
    else:
        u_star = np.asarray(s["u_star"], dtype=float)
    inner = inner_demo_settings(config)
    cfg = InnerLoopConfig(alpha=float(inner["alpha"]), step_size=None,
                          max_iters=max(int(inner["max_iters"]), 2000), tol=float(inner["tol"]))
    run = run_inner_loop(u_star, np.asarray(s["r0"], dtype=float), actuator, cfg)
    if not run.converged:
        log.warning("SAI inner loop hit the iteration cap (%d iterations)", run.n_iters)
    return [csvio.write_iterates_csv(out / "sai_demo.csv", run)]


def run_cli(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_OK

    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")

    try:
        config = parse_config(args.config)
        if args.seed is not None:
            config = replace(config, seed=args.seed)
        if args.mode is not None:
            config = replace(config, mode=args.mode)
        if args.seeds is not None and args.subcommand != "compare":
            raise ConfigError("--seeds only applies to the compare subcommand")
        seeds = [config.seed]
        if args.seeds is not None:
            seeds = _parse_seed_range(args.seeds)
        out = Path(args.out) if args.out is not None else Path(config.out_dir)
    except (ConfigError, ValueError) as err:
        print(f"hes-loop: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG

    try:
        if args.subcommand == "simulate":
            written = cmd_simulate(config, out)
        elif args.subcommand == "plan":
            written = cmd_plan(config, out)
        elif args.subcommand == "mpc":
            written = cmd_mpc(config, out)
        elif args.subcommand == "compare":
            written = cmd_compare(config, out, seeds)
        elif args.subcommand == "inner-demo":
            written = cmd_inner_demo(config, out)
        else:
            written = cmd_sai_demo(config, out)
    except (IntegrationError, FloatingPointError) as err:
        print(f"hes-loop: numerical failure: {err}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ConfigError as err:
        print(f"hes-loop: config error: {err}", file=sys.stderr)
        return EXIT_CONFIG
    except OSError as err:
        print(f"hes-loop: cannot write output: {err}", file=sys.stderr)
        return EXIT_CONFIG

    for path in written:
        log.info("wrote %s", path)
        print(path)
    return EXIT_OK


def main() -> None:
    raise SystemExit(run_cli())
