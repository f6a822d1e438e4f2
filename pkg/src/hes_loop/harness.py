"""Scenario harness: the open-loop vs. closed-loop comparison experiment.

Plans once under nominal parameters, defines the reference as the A-component
of that nominal rollout, perturbs the plant parameters, then either applies
the nominal plan blindly (open loop) or replans from measured states on the
measurement cadence (closed loop, MPC). Tracking metrics quantify how far
each strategy drifts from the reference.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .model import AysParams, HesControl, HesState, Trajectory, ays_rhs, perturb_params, simulate
from .outer_loop import (
    DEFAULT_CONTROL_BOUNDS,
    ControlBounds,
    CostWeights,
    MpcController,
    OcpSpec,
    OpenLoopSolution,
    SolverOptions,
    StateLimits,
    solve_open_loop,
)


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one run needs: the nominal problem, the plant perturbation,
    the measurement cadence, and the solver budgets.

    measurement_period_yr must be a positive integer multiple of step_h_yr.
    ``mode`` selects which runs `compare` performs ("open", "closed", "both").
    """

    seed: int = 0
    delta_max: float = 0.2
    sim_years: float = 50.0
    step_h_yr: float = 1.0
    measurement_period_yr: float = 2.0
    mpc_horizon_stages: int = 50
    mpc_mode: str = "receding"
    mode: str = "both"
    initial_state: HesState = field(default_factory=lambda: HesState(840.0, 7e13, 5e11))
    u_ref: HesControl = field(default_factory=lambda: HesControl(0.03, 5e12))
    nominal_params: AysParams = field(default_factory=AysParams)
    weights: CostWeights = field(default_factory=CostWeights)
    bounds: ControlBounds = DEFAULT_CONTROL_BOUNDS
    state_limits: StateLimits = field(default_factory=StateLimits)
    penalty_weight: float = 1e-24
    solver: SolverOptions = field(default_factory=lambda: SolverOptions(max_iters=2500, grad_tol=5e-3))
    mpc_solver: SolverOptions = field(default_factory=lambda: SolverOptions(max_iters=30, grad_tol=5e-3))
    delay_max_lag_yr: float = 15.0
    stage_cost_kind: str = "quadratic"
    welfare: dict | None = None
    inner: dict | None = None
    sai: dict | None = None
    out_dir: str = "out"

    def __post_init__(self):
        if not 0.0 <= self.delta_max < 1.0:
            raise ValueError(f"delta_max must be in [0, 1), got {self.delta_max!r}")
        if self.sim_years <= 0.0 or self.step_h_yr <= 0.0:
            raise ValueError("sim_years and step_h_yr must be positive")
        ratio = self.measurement_period_yr / self.step_h_yr
        if self.measurement_period_yr <= 0.0 or abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("measurement_period_yr must be a positive integer multiple of step_h_yr")
        if self.mpc_horizon_stages < 1:
            raise ValueError("mpc_horizon_stages must be >= 1")
        if self.mpc_mode not in ("receding", "shrinking"):
            raise ValueError(f"mpc_mode must be 'receding' or 'shrinking', got {self.mpc_mode!r}")
        if self.mode not in ("open", "closed", "both"):
            raise ValueError(f"mode must be 'open', 'closed' or 'both', got {self.mode!r}")
        n_stages = self.sim_years / self.step_h_yr
        if abs(n_stages - round(n_stages)) > 1e-9:
            raise ValueError("sim_years must be an integer number of steps")
        if self.stage_cost_kind not in ("quadratic", "welfare"):
            raise ValueError(f"stage_cost_kind must be 'quadratic' or 'welfare', got {self.stage_cost_kind!r}")

    @property
    def n_stages(self) -> int:
        return int(round(self.sim_years / self.step_h_yr))

    @property
    def measurement_interval_stages(self) -> int:
        return int(round(self.measurement_period_yr / self.step_h_yr))

    def ocp_spec(self, horizon: int | None = None) -> OcpSpec:
        """The nominal problem over the full experiment span (or a given
        horizon)."""
        stage_cost = None
        if self.stage_cost_kind == "welfare":
            from .outer_loop import make_welfare_stage_cost

            w = self.welfare or {}
            stage_cost = make_welfare_stage_cost(w["population"], w["discount"], w["eta"])
        return OcpSpec(
            horizon_T=self.n_stages if horizon is None else horizon,
            step_h=self.step_h_yr,
            x0=self.initial_state,
            weights=self.weights,
            u_ref=self.u_ref,
            bounds=self.bounds,
            state_limits=self.state_limits,
            penalty_weight=self.penalty_weight,
            params=self.nominal_params,
            stage_cost=stage_cost,
        )

    def plant_params(self) -> AysParams:
        return perturb_params(self.nominal_params, self.delta_max, self.seed)


@dataclass(frozen=True)
class RunResult:
    """One run's record: the reference A-series, the realized plant
    trajectory, applied controls, per-stage replanning flags, MPC
    convergence flags, and the tracking metrics."""

    reference: np.ndarray
    plant_trajectory: Trajectory
    applied_controls: np.ndarray
    replanned: np.ndarray
    converged_flags: tuple
    rmse_A: float
    delay_years: float
    constraint_violation_integral: float


def rmse(traj, ref) -> float:
    """Root mean squared pointwise difference of two equal-length series."""
    traj = np.asarray(traj, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if traj.shape != ref.shape:
        raise ValueError(f"series length mismatch: {traj.shape} vs {ref.shape}")
    return float(np.sqrt(np.mean((traj - ref) ** 2)))


def delay_estimate(traj, ref, max_lag: int, dt: float = 1.0) -> float:
    """The lag in [0, max_lag] samples minimizing the sum of squared
    differences between the trajectory shifted back by the lag and the
    reference; ties break toward the smaller lag. Returns lag*dt.

    Requires series longer than 2*max_lag so at least half the series
    overlaps at the largest lag.
    """
    traj = np.asarray(traj, dtype=float)
    ref = np.asarray(ref, dtype=float)
    if traj.shape != ref.shape:
        raise ValueError("series length mismatch")
    n = len(traj)
    if max_lag < 0:
        raise ValueError("max_lag must be non-negative")
    if n <= 2 * max_lag:
        raise ValueError(f"series too short ({n}) for max_lag {max_lag}")
    best_lag, best_ssd = 0, np.inf
    for lag in range(max_lag + 1):
        d = traj[lag:n] - ref[: n - lag]
        ssd = float(d @ d)
        if ssd < best_ssd:
            best_lag, best_ssd = lag, ssd
    return best_lag * dt


def _violation_integral(traj: Trajectory, limits: StateLimits, h: float) -> float:
    """Time integral of the total constraint violation magnitude along the
    trajectory (A above the ceiling, Y below the floor, negative states)."""
    A, Y = traj.states[:, 0], traj.states[:, 1]
    v = (
        np.maximum(0.0, A - limits.A_max)
        + np.maximum(0.0, limits.Y_min - Y)
        + np.sum(np.maximum(0.0, -traj.states), axis=1)
    )
    return float(np.sum(v) * h)


def plan_nominal(config: ExperimentConfig) -> OpenLoopSolution:
    """Solve the full-span problem under nominal parameters."""
    return solve_open_loop(config.ocp_spec(), opts=config.solver)


def make_reference(config: ExperimentConfig, nominal: OpenLoopSolution | None = None) -> np.ndarray:
    """The reference A-trajectory: the A-component of the optimal nominal
    rollout. Achieved exactly by open-loop control on an unperturbed plant,
    by construction."""
    if nominal is None:
        nominal = plan_nominal(config)
    p = config.nominal_params
    tr = simulate(lambda x, u: ays_rhs(x, u, p), config.initial_state, nominal.useq,
                  config.step_h_yr, config.n_stages)
    return tr.states[:, 0]


def _metrics(config: ExperimentConfig, reference: np.ndarray, traj: Trajectory,
             controls: np.ndarray, replanned: np.ndarray, flags: tuple) -> RunResult:
    max_lag = int(round(config.delay_max_lag_yr / config.step_h_yr))
    max_lag = min(max_lag, (len(reference) - 1) // 2)
    return RunResult(
        reference=reference,
        plant_trajectory=traj,
        applied_controls=controls,
        replanned=replanned,
        converged_flags=flags,
        rmse_A=rmse(traj.states[:, 0], reference),
        delay_years=delay_estimate(traj.states[:, 0], reference, max_lag, dt=config.step_h_yr),
        constraint_violation_integral=_violation_integral(traj, config.state_limits, config.step_h_yr),
    )


def run_open_loop(config: ExperimentConfig, nominal: OpenLoopSolution | None = None,
                  reference: np.ndarray | None = None) -> RunResult:
    """Apply the nominal optimal plan to the perturbed plant with no
    feedback and score the drift from the reference."""
    if nominal is None:
        nominal = plan_nominal(config)
    if reference is None:
        reference = make_reference(config, nominal)
    p_true = config.plant_params()
    traj = simulate(lambda x, u: ays_rhs(x, u, p_true), config.initial_state, nominal.useq,
                    config.step_h_yr, config.n_stages)
    replanned = np.zeros(config.n_stages + 1, dtype=int)
    return _metrics(config, reference, traj, nominal.useq.copy(), replanned, ())


def run_closed_loop(config: ExperimentConfig, nominal: OpenLoopSolution | None = None,
                    reference: np.ndarray | None = None) -> RunResult:
    """Measure the perturbed plant every measurement period, replan from the
    measured state, and apply the remainder of the latest plan between
    measurements. Solver warnings per replan are recorded as flags; the run
    always continues with the best iterate."""
    if nominal is None:
        nominal = plan_nominal(config)
    if reference is None:
        reference = make_reference(config, nominal)
    p_true = config.plant_params()
    rhs_true = lambda x, u: ays_rhs(x, u, p_true)
    n = config.n_stages
    interval = config.measurement_interval_stages
    spec = config.ocp_spec(horizon=min(config.mpc_horizon_stages, n))
    ctrl = MpcController(
        spec,
        mode=config.mpc_mode,
        replan_interval_stages=interval,
        total_stages=n,
        solver=config.mpc_solver,
        initial_plan=nominal.useq[: spec.horizon_T],
    )
    x = config.initial_state.as_array()
    states = np.empty((n + 1, 3))
    states[0] = x
    controls = np.empty((n, 2))
    replanned = np.zeros(n + 1, dtype=int)
    u_prev: HesControl | None = None
    plan = None
    last_replan = 0
    for t in range(n):
        if t % interval == 0:
            u_prev = ctrl.step(HesState.from_array(x), u_prev)
            plan = ctrl.plan
            last_replan = t
            replanned[t] = 1
        u = plan[t - last_replan]
        x = simulate(rhs_true, x, u, config.step_h_yr, 1).states[-1]
        states[t + 1] = x
        controls[t] = u
    traj = Trajectory(times=config.step_h_yr * np.arange(n + 1), states=states, controls=controls)
    return _metrics(config, reference, traj, controls, replanned, tuple(ctrl.converged_flags))


@dataclass(frozen=True)
class SeedComparison:
    seed: int
    open: RunResult | None
    closed: RunResult | None


def compare_seeds(config: ExperimentConfig, seeds, max_workers: int | None = None) -> list[SeedComparison]:
    """Run the configured modes for every seed against one shared nominal
    plan. Seeds fan out to worker threads (each owns its runs); results come
    back sorted by seed so aggregation is order-independent."""
    from concurrent.futures import ThreadPoolExecutor

    seeds = sorted(int(s) for s in seeds)
    nominal = plan_nominal(config)
    reference = make_reference(config, nominal)

    def one(seed: int) -> SeedComparison:
        cfg = replace(config, seed=seed)
        ro = run_open_loop(cfg, nominal, reference) if config.mode in ("open", "both") else None
        rc = run_closed_loop(cfg, nominal, reference) if config.mode in ("closed", "both") else None
        return SeedComparison(seed=seed, open=ro, closed=rc)

    if max_workers is None or max_workers <= 1 or len(seeds) <= 1:
        return [one(s) for s in seeds]
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        results = list(pool.map(one, seeds))
    return sorted(results, key=lambda r: r.seed)
