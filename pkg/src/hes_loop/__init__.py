"""Nested two-loop feedback control for human-Earth system models.

An outer model-predictive-control loop plans over the AYS climate-economy
ODE and replans from measurements; an inner feedback-based-optimization
loop drives actuators toward the planned setpoints. The scenario harness
reproduces the open-loop vs. closed-loop comparison under multiplicative
parameter uncertainty.
"""

from .harness import (
    ExperimentConfig,
    RunResult,
    compare_seeds,
    delay_estimate,
    make_reference,
    plan_nominal,
    rmse,
    run_closed_loop,
    run_open_loop,
)
from .inner_loop import (
    ActuatorMap,
    InnerLoopConfig,
    InnerLoopRun,
    LegendreCoeffs,
    ReferenceBox,
    default_sai_matrices,
    default_step_size,
    identity_actuator,
    inner_cost,
    legendre_eval,
    legendre_project,
    linear_actuator,
    make_sai_actuator,
    pgd_update,
    run_inner_loop,
)
from .model import (
    AysParams,
    HesControl,
    HesState,
    IntegrationError,
    Trajectory,
    ays_rhs,
    energy_shares,
    make_ays_transition,
    perturb_params,
    rk4_step,
    simulate,
)
from .outer_loop import (
    ControlBounds,
    CostWeights,
    MpcController,
    OcpSpec,
    OpenLoopSolution,
    SolverOptions,
    StateLimits,
    constraint_penalty,
    grad_fd,
    make_welfare_stage_cost,
    minimize_box_pgd,
    project_box,
    solve_open_loop,
    stage_cost_ays,
    total_cost,
    welfare_stage_cost,
)

__version__ = "0.1.0"
