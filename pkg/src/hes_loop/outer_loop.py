"""Outer control loop: the multi-stage optimal control problem and its solver.

Builds the finite-horizon problem (stage cost summed along a single-shooting
rollout of the discretized dynamics, soft penalties for the state limits),
solves it with projected gradient descent under box control bounds, and wraps
the solver in a warm-started MPC controller with shrinking or receding
horizon.

Control sequences are numpy arrays of shape (T, m); for the AYS problem
m = 2 with columns (beta, sigma). Cost callables are vectorized: they accept
(..., T, m) batches and return (...) cost arrays, which keeps the
finite-difference gradient a single batched rollout.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Sequence

import numpy as np

from .model import AysParams, HesControl, HesState, make_ays_transition

# Column scale floors for finite-difference steps on (beta, sigma) entries.
FD_SCALE_FLOORS = (1e-4, 1e8)


@dataclass(frozen=True)
class CostWeights:
    """Inverse weights lam, mu, nu on A^2, (sigma-sigma0)^2, (beta-beta0)^2
    plus quadratic control penalties w_beta, w_sigma.

    Defaults normalize each deviation term to order one at the problem's
    characteristic scales (A ~ 345 GtC, sigma0 = 5e12 GJ, beta0 = 0.03/yr).
    """

    lam: float = 345.0**2
    mu: float = (5e12) ** 2
    nu: float = 0.03**2
    w_beta: float = 0.0
    w_sigma: float = 0.0

    def __post_init__(self):
        for name in ("lam", "mu", "nu"):
            if not getattr(self, name) > 0.0:
                raise ValueError(f"CostWeights.{name} must be strictly positive")
        for name in ("w_beta", "w_sigma"):
            if getattr(self, name) < 0.0:
                raise ValueError(f"CostWeights.{name} must be non-negative")


@dataclass(frozen=True)
class ControlBounds:
    """Per-component control box; stored as tuples so specs stay hashable."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo, hi = (tuple(float(v) for v in self.lower), tuple(float(v) for v in self.upper))
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi):
            raise ValueError("bounds lower/upper length mismatch")
        if not all(a <= b for a, b in zip(lo, hi)):
            raise ValueError("empty control box: lower > upper")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def as_arrays(self):
        return np.array(self.lower), np.array(self.upper)

    def contains(self, useq) -> bool:
        lo, hi = self.as_arrays()
        u = np.asarray(useq, dtype=float)
        return bool(np.all(u >= lo) and np.all(u <= hi))


# Default box: beta in [-0.05, 0.05] 1/yr, sigma in [0, 10*sigma0] GJ.
DEFAULT_CONTROL_BOUNDS = ControlBounds(lower=(-0.05, 0.0), upper=(0.05, 5e13))


@dataclass(frozen=True)
class StateLimits:
    """Target subspace: carbon ceiling A <= A_max, welfare floor Y >= Y_min."""

    A_max: float = 345.0
    Y_min: float = 4e13


@dataclass(frozen=True)
class OcpSpec:
    """The multi-stage problem: horizon, dynamics, costs, bounds, limits.

    By default the dynamics are one RK4 step of the AYS model per stage and
    the stage cost is the diagonal quadratic form built from ``weights`` and
    ``u_ref``. Both can be overridden with vectorized callables
    (``dynamics(x, u) -> x_next`` and ``stage_cost(x, u, t) -> cost``) to
    pose other instances of the same problem shape.
    """

    horizon_T: int
    step_h: float = 1.0
    x0: HesState | np.ndarray = field(default_factory=lambda: HesState(840.0, 7e13, 5e11))
    weights: CostWeights = field(default_factory=CostWeights)
    u_ref: HesControl = field(default_factory=lambda: HesControl(0.03, 5e12))
    bounds: ControlBounds = DEFAULT_CONTROL_BOUNDS
    state_limits: StateLimits = field(default_factory=StateLimits)
    penalty_weight: float = 1e-22
    params: AysParams = field(default_factory=AysParams)
    stage_cost: Callable | None = None
    dynamics: Callable | None = None

    def __post_init__(self):
        if self.horizon_T < 1:
            raise ValueError("horizon_T must be at least 1")
        if self.step_h <= 0.0:
            raise ValueError("step_h must be positive")
        if self.penalty_weight < 0.0:
            raise ValueError("penalty_weight must be non-negative")

    def x0_array(self) -> np.ndarray:
        return self.x0.as_array() if isinstance(self.x0, HesState) else np.asarray(self.x0, dtype=float)

    def transition(self) -> Callable:
        """Discrete stage transition x(t+1) = f(x(t), u(t))."""
        if self.dynamics is not None:
            return self.dynamics
        return make_ays_transition(self.params, self.step_h)

    def stage_cost_fn(self) -> Callable:
        if self.stage_cost is not None:
            return self.stage_cost
        w, u_ref = self.weights, self.u_ref
        return lambda x, u, t: stage_cost_ays(x, u, w, u_ref)


def stage_cost_ays(x, u, w: CostWeights, u_ref: HesControl):
    """Quadratic stage cost A^2/lam + (sigma-sigma0)^2/mu + (beta-beta0)^2/nu
    + w_beta*beta^2 + w_sigma*sigma^2. Vectorized over leading dims."""
    if isinstance(x, HesState):
        x = x.as_array()
    if isinstance(u, HesControl):
        u = u.as_array()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    A = x[..., 0]
    beta, sigma = u[..., 0], u[..., 1]
    return (
        A**2 / w.lam
        + (sigma - u_ref.sigma) ** 2 / w.mu
        + (beta - u_ref.beta) ** 2 / w.nu
        + w.w_beta * beta**2
        + w.w_sigma * sigma**2
    )


def welfare_stage_cost(pi: float, gamma: float, eta: float, Psi: float) -> float:
    """Discounted per-capita consumption utility pi*(gamma/pi)^(1-eta)/(1-eta)*Psi.

    This is a welfare (to maximize); callers negate it to use it as a cost.
    eta = 1 is the log-utility singularity and is rejected.
    """
    if pi <= 0.0:
        raise ValueError("population pi must be positive")
    if gamma < 0.0:
        raise ValueError("consumption gamma must be non-negative")
    if eta == 1.0:
        raise ValueError("eta = 1 is singular (log-utility limit not supported)")
    if not 0.0 < Psi <= 1.0:
        raise ValueError("discount factor Psi must be in (0, 1]")
    return pi * (gamma / pi) ** (1.0 - eta) / (1.0 - eta) * Psi


def make_welfare_stage_cost(population: Sequence[float], discount: Sequence[float],
                            eta: float, consumption: Callable | None = None) -> Callable:
    """Alternate stage cost: negated welfare on exogenous per-stage population
    and discount sequences. ``consumption`` maps (x, u) to gamma; by default
    consumption is the gross world product Y."""
    population = np.asarray(population, dtype=float)
    discount = np.asarray(discount, dtype=float)
    if np.any(population <= 0.0):
        raise ValueError("population sequence must be positive")
    if np.any((discount <= 0.0) | (discount > 1.0)):
        raise ValueError("discount sequence must lie in (0, 1]")
    if eta == 1.0:
        raise ValueError("eta = 1 is singular (log-utility limit not supported)")
    if consumption is None:
        consumption = lambda x, u: np.asarray(x, dtype=float)[..., 1]

    def cost(x, u, t):
        if not 1 <= t <= len(population):
            raise ValueError(f"stage {t} outside the supplied welfare sequences")
        pi, Psi = population[t - 1], discount[t - 1]
        gamma = np.asarray(consumption(x, u), dtype=float)
        return -(pi * (gamma / pi) ** (1.0 - eta) / (1.0 - eta) * Psi)

    return cost


def constraint_penalty(x, spec: OcpSpec):
    """Soft penalty penalty_weight*(relu(A-A_max)^2 + relu(Y_min-Y)^2 +
    sum_i relu(-x_i)^2); zero on the feasible region including its boundary.
    Vectorized over leading dims."""
    if isinstance(x, HesState):
        x = x.as_array()
    x = np.asarray(x, dtype=float)
    over_A = np.maximum(0.0, x[..., 0] - spec.state_limits.A_max)
    under_Y = np.maximum(0.0, spec.state_limits.Y_min - x[..., 1])
    negative = np.maximum(0.0, -x)
    return spec.penalty_weight * (over_A**2 + under_Y**2 + np.sum(negative**2, axis=-1))


def total_cost(spec: OcpSpec, useq):
    """Rollout cost of problem (1): sum over stages t = 1..T of
    stage_cost(x(t), u(t)) + constraint_penalty(x(t)) along the nominal-model
    rollout from x0.

    ``useq`` has shape (T, m) for a single sequence or (..., T, m) for a
    batch; returns a float or a (...) array accordingly.
    """
    useq = np.asarray(useq, dtype=float)
    single = useq.ndim == 2
    U = useq[None] if single else useq
    if U.shape[-2] != spec.horizon_T:
        raise ValueError(f"control sequence has {U.shape[-2]} stages, spec wants {spec.horizon_T}")
    f = spec.transition()
    cost_fn = spec.stage_cost_fn()
    penalized = spec.penalty_weight > 0.0
    x = np.broadcast_to(spec.x0_array(), U.shape[:-2] + spec.x0_array().shape).copy()
    total = np.zeros(U.shape[:-2])
    for t in range(spec.horizon_T):
        u = U[..., t, :]
        x = np.asarray(f(x, u), dtype=float)
        total = total + cost_fn(x, u, t + 1)
        if penalized:
            total = total + constraint_penalty(x, spec)
    return float(total[0]) if single else total


def project_box(useq, bounds: ControlBounds):
    """Componentwise clamp of a control sequence to the box (idempotent)."""
    lo, hi = bounds.as_arrays()
    return np.clip(np.asarray(useq, dtype=float), lo, hi)


def grad_fd(cost: Callable, useq, rel_step: float = 1e-3, scale_floors=FD_SCALE_FLOORS):
    """Central finite-difference gradient of a vectorized cost at useq.

    The probe step for each entry is rel_step*max(|entry|, floor) with a
    per-column scale floor (defaults: 1e-4 for beta, 1e8 for sigma). The cost
    must accept a batch (B, T, m); a per-probe fallback handles plain scalar
    costs. Raises on non-finite cost at a probe point.
    """
    if rel_step <= 0.0:
        raise ValueError("rel_step must be positive")
    u = np.asarray(useq, dtype=float)
    floors = np.broadcast_to(np.asarray(scale_floors, dtype=float), u.shape)
    steps = rel_step * np.maximum(np.abs(u), floors)
    n = u.size
    flat_steps = steps.ravel()
    probes = np.repeat(u.reshape(1, *u.shape), 2 * n, axis=0)
    flat = probes.reshape(2 * n, n)
    idx = np.arange(n)
    flat[2 * idx, idx] += flat_steps
    flat[2 * idx + 1, idx] -= flat_steps
    values = _evaluate_cost_batch(cost, probes)
    if not np.all(np.isfinite(values)):
        bad = int(np.flatnonzero(~np.isfinite(values))[0])
        raise FloatingPointError(f"non-finite cost at finite-difference probe {bad}")
    grad = (values[0::2] - values[1::2]) / (2.0 * flat_steps)
    return grad.reshape(u.shape)


def _evaluate_cost_batch(cost: Callable, batch: np.ndarray) -> np.ndarray:
    """Evaluate a cost on a (B, T, m) batch, falling back to a python loop
    for costs that only take a single (T, m) sequence."""
    try:
        values = np.asarray(cost(batch), dtype=float)
        if values.shape == (batch.shape[0],):
            return values
    except (ValueError, TypeError, IndexError):
        pass
    return np.array([float(cost(batch[i])) for i in range(batch.shape[0])])


@dataclass(frozen=True)
class SolverOptions:
    """Projected-gradient solver knobs.

    Tolerances act in scaled control units (entries divided by the
    per-column ``scales``, derived from the box half-widths when None).
    """

    max_iters: int = 400
    grad_tol: float = 1e-6
    cost_tol: float = 0.0
    step0: float = 1.0
    step_max: float = 64.0
    max_halvings: int = 40
    fd_rel_step: float = 1e-3
    scales: tuple | None = None

    def __post_init__(self):
        if self.max_iters < 1 or self.max_halvings < 0:
            raise ValueError("max_iters must be >= 1 and max_halvings >= 0")
        if self.grad_tol < 0.0 or self.cost_tol < 0.0:
            raise ValueError("tolerances must be non-negative")
        if self.step0 <= 0.0:
            raise ValueError("step0 must be positive")


@dataclass(frozen=True)
class OpenLoopSolution:
    """Solver output: the best iterate, its (non-increasing) cost history,
    and whether a termination tolerance (rather than the iteration cap or a
    line-search stall) ended the run."""

    useq: np.ndarray
    cost_history: np.ndarray
    converged: bool
    n_iters: int
    message: str


def _column_scales(bounds: ControlBounds, opts: SolverOptions) -> np.ndarray:
    if opts.scales is not None:
        return np.asarray(opts.scales, dtype=float)
    lo, hi = bounds.as_arrays()
    half = 0.5 * (hi - lo)
    mag = np.maximum(np.abs(lo), np.abs(hi))
    return np.maximum(np.where(half > 0.0, half, mag), 1e-12)


def minimize_box_pgd(cost: Callable, u0, bounds: ControlBounds,
                     opts: SolverOptions = SolverOptions(),
                     scale_floors=FD_SCALE_FLOORS) -> OpenLoopSolution:
    """Projected gradient descent with backtracking on a box-constrained,
    vectorized cost over a (T, m) control array.

    Per iteration: diagonal-preconditioned step u <- clip(u - step*g*s^2)
    with per-column scales s, halving ``step`` until the cost strictly
    decreases. Terminates when the scaled projected-gradient residual drops
    below grad_tol, when an accepted step improves the cost by less than
    cost_tol, or at the iteration cap (flagged not converged). The recorded
    cost history is non-increasing by construction.
    """
    u = np.asarray(u0, dtype=float).copy()
    if not bounds.contains(u):
        raise ValueError("initial control sequence violates the bounds")
    lo, hi = bounds.as_arrays()
    s2 = _column_scales(bounds, opts) ** 2
    scales = np.sqrt(s2)
    c = float(cost(u))
    history = [c]
    step = opts.step0
    message = "iteration cap reached"
    converged = False
    it = 0
    for it in range(opts.max_iters):
        g = grad_fd(cost, u, rel_step=opts.fd_rel_step, scale_floors=scale_floors)
        residual = (u - np.clip(u - g * s2, lo, hi)) / scales
        if np.max(np.abs(residual)) <= opts.grad_tol:
            converged, message = True, "projected-gradient tolerance reached"
            break
        # Backtracking ladder, evaluated as one batch: first decrease wins.
        n_try = opts.max_halvings + 1
        factors = step * 0.5 ** np.arange(n_try)
        candidates = np.clip(u[None] - factors.reshape(-1, *([1] * u.ndim)) * (g * s2)[None], lo, hi)
        values = _evaluate_cost_batch(cost, candidates)
        decreasing = np.flatnonzero(values < c)
        if decreasing.size == 0:
            message = "line search stalled (no descent within max_halvings)"
            break
        j = int(decreasing[0])
        u = candidates[j]
        drop = c - float(values[j])
        c = float(values[j])
        history.append(c)
        step = min(factors[j] * 2.0, opts.step_max)
        if opts.cost_tol > 0.0 and drop <= opts.cost_tol * max(1.0, abs(c)):
            converged, message = True, "cost-decrease tolerance reached"
            it += 1
            break
    else:
        it = opts.max_iters
    return OpenLoopSolution(useq=u, cost_history=np.asarray(history), converged=converged,
                            n_iters=it, message=message)


def solve_open_loop(spec: OcpSpec, init=None, opts: SolverOptions = SolverOptions()) -> OpenLoopSolution:
    """Solve problem (1) open loop by single shooting: projected gradient
    descent on ``total_cost`` over the (horizon_T, m) control sequence.

    ``init`` defaults to the reference control held over the horizon; it
    must lie inside the bounds. Non-convergence is reported through the
    ``converged`` flag, never raised.
    """
    m = spec.bounds.dim
    if init is None:
        base = spec.u_ref.as_array() if m == 2 else np.zeros(m)
        init = np.tile(base, (spec.horizon_T, 1))
        init = project_box(init, spec.bounds)
    init = np.asarray(init, dtype=float)
    if init.shape != (spec.horizon_T, m):
        raise ValueError(f"init shape {init.shape} does not match ({spec.horizon_T}, {m})")
    if opts.scales is None and m == 2:
        # Characteristic magnitudes condition the preconditioner far better
        # than box half-widths for the AYS cost normalization.
        opts = replace(opts, scales=(max(abs(spec.u_ref.beta), 1e-3), max(abs(spec.u_ref.sigma), 1.0)))
    floors = FD_SCALE_FLOORS if m == 2 else tuple([1e-8] * m)
    return minimize_box_pgd(lambda U: total_cost(spec, U), init, spec.bounds, opts, scale_floors=floors)


class MpcController:
    """Warm-started MPC around ``solve_open_loop`` (the outer-loop controller).

    Each ``step`` re-solves the problem from the measured state and returns
    the first control of the new plan; the full plan stays available as
    ``plan`` so callers can apply its remainder until the next measurement.

    mode "receding" keeps the horizon fixed at spec.horizon_T; "shrinking"
    reduces it by the stages elapsed since construction. Both clip the
    window at ``total_stages`` (the experiment end) when given, so the
    controller never optimizes stages that are neither applied nor scored.
    """

    def __init__(self, spec: OcpSpec, mode: str = "receding", replan_interval_stages: int = 1,
                 total_stages: int | None = None, solver: SolverOptions = SolverOptions(),
                 initial_plan=None):
        if mode not in ("receding", "shrinking"):
            raise ValueError(f"mode must be 'receding' or 'shrinking', got {mode!r}")
        if replan_interval_stages < 1:
            raise ValueError("replan_interval_stages must be >= 1")
        if mode == "shrinking" and total_stages is None:
            total_stages = spec.horizon_T
        self.spec = spec
        self.mode = mode
        self.interval = replan_interval_stages
        self.total_stages = total_stages
        self.solver = solver
        self.plan = None if initial_plan is None else project_box(initial_plan, spec.bounds)
        self.stage = 0
        self.n_calls = 0
        self.converged_flags: list[bool] = []

    def _horizon_at(self, stage: int) -> int:
        if self.mode == "shrinking":
            horizon = self.spec.horizon_T - stage
        else:
            horizon = self.spec.horizon_T
        if self.total_stages is not None:
            horizon = min(horizon, self.total_stages - stage)
        if horizon < 1:
            raise ValueError(f"no stages left to plan at stage {stage}")
        return horizon

    def _warm_start(self, horizon: int, shift: int) -> np.ndarray:
        if self.plan is None:
            base = self.spec.u_ref.as_array() if self.spec.bounds.dim == 2 else np.zeros(self.spec.bounds.dim)
            return project_box(np.tile(base, (horizon, 1)), self.spec.bounds)
        shifted = self.plan[shift:]
        if len(shifted) >= horizon:
            return shifted[:horizon].copy()
        if len(shifted) == 0:
            shifted = self.plan[-1:]
        pad = np.tile(shifted[-1], (horizon - len(shifted), 1))
        return np.vstack([shifted, pad])

    def step(self, x_meas, u_applied: HesControl | None = None) -> HesControl:
        """Replan from the measured state and return the first control of
        the updated plan. ``u_applied`` is the input implemented since the
        previous call (informational; the warm start comes from the stored
        plan)."""
        stage = self.n_calls * self.interval
        horizon = self._horizon_at(stage)
        shift = self.interval if self.n_calls > 0 else 0
        warm = self._warm_start(horizon, shift)
        sub = replace(self.spec, x0=x_meas, horizon_T=horizon)
        sol = solve_open_loop(sub, init=warm, opts=self.solver)
        self.plan = sol.useq
        self.stage = stage
        self.n_calls += 1
        self.converged_flags.append(sol.converged)
        first = sol.useq[0]
        return HesControl(float(first[0]), float(first[1])) if sub.bounds.dim == 2 else first
