"""CSV serialization for runs, summaries and inner-loop iterate histories.

Files are written atomically (temp file in the target directory, then
rename) so an interrupted run never leaves a truncated CSV behind. All
floats are formatted with 17 significant digits, which makes repeated runs
byte-identical and diffable.
"""

from __future__ import annotations

import csv
import os
import tempfile
from pathlib import Path

import numpy as np

from .harness import RunResult, SeedComparison

RUN_HEADER = ["time_yr", "A_ref", "A", "Y", "S", "beta", "sigma", "replanned"]
SUMMARY_HEADER = ["seed", "rmse_open", "rmse_closed", "delay_open_yr", "delay_closed_yr"]


def fmt(value) -> str:
    """17-significant-digit text for floats; integers stay integers."""
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return format(float(value), ".17g")


def write_rows_atomic(path, header, rows) -> Path:
    """Write a CSV through a temp file + rename; returns the final path."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp_name = tempfile.mkstemp(dir=path.parent, prefix=path.name + ".", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(header)
            for row in rows:
                writer.writerow([v if isinstance(v, str) else fmt(v) for v in row])
        os.replace(tmp_name, path)
    except BaseException:
        if os.path.exists(tmp_name):
            os.unlink(tmp_name)
        raise
    return path


def write_run_csv(path, result: RunResult) -> Path:
    """Per-run CSV: time_yr, A_ref, A, Y, S, beta, sigma, replanned(0/1).

    One row per time point; the control columns carry the control applied
    over the interval starting at that time (the final row repeats the last
    applied control).
    """
    traj = result.plant_trajectory
    n = len(traj.controls)
    rows = []
    for i in range(n + 1):
        u = traj.controls[min(i, n - 1)] if n else (0.0, 0.0)
        rows.append([
            traj.times[i],
            result.reference[i],
            traj.states[i, 0],
            traj.states[i, 1],
            traj.states[i, 2],
            u[0],
            u[1],
            int(result.replanned[i]) if i < len(result.replanned) else 0,
        ])
    return write_rows_atomic(path, RUN_HEADER, rows)


def write_summary_csv(path, comparisons: list[SeedComparison]) -> Path:
    """Across-seed summary: seed, rmse_open, rmse_closed, delay_open_yr,
    delay_closed_yr (empty cells for modes that were not run)."""
    rows = []
    for comp in sorted(comparisons, key=lambda c: c.seed):
        rows.append([
            comp.seed,
            fmt(comp.open.rmse_A) if comp.open else "",
            fmt(comp.closed.rmse_A) if comp.closed else "",
            fmt(comp.open.delay_years) if comp.open else "",
            fmt(comp.closed.delay_years) if comp.closed else "",
        ])
    return write_rows_atomic(path, SUMMARY_HEADER, rows)


def write_rollout_csv(path, traj) -> Path:
    """Plain rollout CSV: time_yr, A, Y, S, beta, sigma."""
    n = len(traj.controls)
    rows = []
    for i in range(len(traj.times)):
        u = traj.controls[min(i, n - 1)] if n else (0.0, 0.0)
        rows.append([traj.times[i], traj.states[i, 0], traj.states[i, 1], traj.states[i, 2], u[0], u[1]])
    return write_rows_atomic(path, ["time_yr", "A", "Y", "S", "beta", "sigma"], rows)


def write_plan_csv(path, useq, step_h: float) -> Path:
    """Planned control sequence: stage, time_yr, beta, sigma."""
    rows = [[t, t * step_h, useq[t, 0], useq[t, 1]] for t in range(len(useq))]
    return write_rows_atomic(path, ["stage", "time_yr", "beta", "sigma"], rows)


def write_iterates_csv(path, run) -> Path:
    """Inner-loop iterate history: iteration, r components, measured output
    components, inner cost."""
    n_r = run.references.shape[1]
    n_u = run.outputs.shape[1]
    header = (["iteration"] + [f"r_{i}" for i in range(n_r)]
              + [f"u_meas_{i}" for i in range(n_u)] + ["inner_cost"])
    rows = []
    for k in range(len(run.references)):
        rows.append([k, *run.references[k], *run.outputs[k], run.costs[k]])
    return write_rows_atomic(path, header, rows)
