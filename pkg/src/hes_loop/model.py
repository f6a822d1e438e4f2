"""AYS climate-economy model core.

State, control and parameter types for the three-state AYS model
(A: excess atmospheric carbon, Y: gross world product, S: renewable
knowledge stock), the continuous-time right-hand side, a fixed-step
classical RK4 integrator, and the multiplicative parameter perturbation
used to emulate an uncertain plant.

All operations are pure functions of their inputs and safe to call from
multiple threads. Vector quantities use plain numpy arrays with the
component order (A, Y, S) for states and (beta, sigma) for controls;
the dataclasses are the typed boundary objects.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable

import numpy as np


class IntegrationError(RuntimeError):
    """A non-finite value appeared while stepping the dynamics.

    ``stage`` is the RK stage index (1-4) that produced the bad value,
    ``step`` the simulation step, when known.
    """

    def __init__(self, message: str, stage: int | None = None, step: int | None = None):
        super().__init__(message)
        self.stage = stage
        self.step = step


def _require_finite(name: str, *values: float) -> None:
    for v in values:
        if not math.isfinite(v):
            raise ValueError(f"{name} must be finite, got {v!r}")


@dataclass(frozen=True)
class HesState:
    """HES state: excess atmospheric carbon A [GtC], gross world product
    Y [$/yr], renewable knowledge stock S [GJ].

    Construction requires finite fields only; physical non-negativity is
    checked where trajectories are validated, never silently clamped.
    """

    A: float
    Y: float
    S: float

    def __post_init__(self):
        _require_finite("HesState field", self.A, self.Y, self.S)

    @property
    def is_physical(self) -> bool:
        return self.A >= 0.0 and self.Y >= 0.0 and self.S >= 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.A, self.Y, self.S], dtype=float)

    @classmethod
    def from_array(cls, x) -> "HesState":
        x = np.asarray(x, dtype=float)
        return cls(float(x[0]), float(x[1]), float(x[2]))


@dataclass(frozen=True)
class HesControl:
    """HES control: growth index change beta [1/yr] and break-even
    knowledge level sigma [GJ] (sigma >= 0)."""

    beta: float
    sigma: float

    def __post_init__(self):
        _require_finite("HesControl field", self.beta, self.sigma)
        if self.sigma < 0.0:
            raise ValueError(f"sigma must be non-negative, got {self.sigma!r}")

    def as_array(self) -> np.ndarray:
        return np.array([self.beta, self.sigma], dtype=float)

    @classmethod
    def from_array(cls, u) -> "HesControl":
        u = np.asarray(u, dtype=float)
        return cls(float(u[0]), float(u[1]))


@dataclass(frozen=True)
class AysParams:
    """AYS model parameters, all strictly positive.

    Defaults are the nominal values of the numerical experiment:
    theta [1/(yr GtC)] climate damage, eps_energy [$/GJ] energy
    efficiency, phi_fossil [GJ/GtC] fossil combustion efficiency,
    tau_A / tau_S [yr] decay times, rho the (dimensionless)
    knowledge-substitution exponent.
    """

    theta: float = 8.57e-5
    eps_energy: float = 147.0
    phi_fossil: float = 4.7e10
    tau_A: float = 50.0
    tau_S: float = 50.0
    rho: float = 2.0

    def __post_init__(self):
        for name in ("theta", "eps_energy", "phi_fossil", "tau_A", "tau_S", "rho"):
            v = getattr(self, name)
            _require_finite(f"AysParams.{name}", v)
            if v <= 0.0:
                raise ValueError(f"AysParams.{name} must be strictly positive, got {v!r}")


@dataclass(frozen=True)
class Trajectory:
    """A simulated path: times (n+1,), states (n+1, 3), controls (n, 2).

    Controls are piecewise constant; controls[i] was applied on
    [times[i], times[i+1]).
    """

    times: np.ndarray
    states: np.ndarray
    controls: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        states = np.atleast_2d(np.asarray(self.states, dtype=float))
        controls = np.asarray(self.controls, dtype=float).reshape(-1, 2) if np.size(self.controls) else np.empty((0, 2))
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "states", states)
        object.__setattr__(self, "controls", controls)
        if len(states) != len(times):
            raise ValueError(f"len(states)={len(states)} != len(times)={len(times)}")
        if len(controls) != len(times) - 1:
            raise ValueError(f"len(controls)={len(controls)} != len(times)-1={len(times) - 1}")
        if len(times) > 1 and not np.all(np.diff(times) > 0.0):
            raise ValueError("times must be strictly increasing")

    def __len__(self) -> int:
        return len(self.times)

    def state(self, i: int) -> HesState:
        return HesState.from_array(self.states[i])

    def control(self, i: int) -> HesControl:
        return HesControl.from_array(self.controls[i])


def _shares_core(sigma, S, rho: float):
    """Share fractions on |.|/max ratios: overflow-safe and defined (by even
    extension) for slightly negative arguments from finite-difference probes.
    Division by a zero max yields nan rather than raising."""
    m = np.maximum(np.abs(sigma), np.abs(S))
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        a = (np.abs(sigma) / m) ** rho
        b = (np.abs(S) / m) ** rho
        denom = a + b
        return a / denom, b / denom


def energy_shares(sigma, S, rho: float = 2.0):
    """Fossil and renewable energy shares sigma^rho/(sigma^rho+S^rho) and
    S^rho/(sigma^rho+S^rho).

    Computed on ratios against max(|sigma|, |S|) so large magnitudes cannot
    overflow; the two shares sum to one exactly up to rounding. Raises
    ValueError when sigma and S are both zero (degenerate fraction).
    """
    sigma = np.asarray(sigma, dtype=float)
    S = np.asarray(S, dtype=float)
    if np.any(np.maximum(np.abs(sigma), np.abs(S)) == 0.0):
        raise ValueError("degenerate fraction: sigma^rho + S^rho = 0 (sigma = S = 0)")
    return _shares_core(sigma, S, rho)


def _rhs_core(x: np.ndarray, u: np.ndarray, p: AysParams) -> np.ndarray:
    """AYS right-hand side on arrays, no validation; nan propagates."""
    A, Y, S = x[..., 0], x[..., 1], x[..., 2]
    beta, sigma = u[..., 0], u[..., 1]
    fossil, renewable = _shares_core(sigma, S, p.rho)
    dA = fossil * Y / (p.eps_energy * p.phi_fossil) - A / p.tau_A
    dY = (beta - p.theta * A) * Y
    dS = renewable * Y / p.eps_energy - S / p.tau_S
    return np.stack([dA, dY, dS], axis=-1)


def ays_rhs(x, u, p: AysParams) -> np.ndarray:
    """Time derivative (dA/dt, dY/dt, dS/dt) of the AYS model.

    dA/dt = Gf * Y/(eps*phi) - A/tau_A
    dY/dt = (beta - theta*A) * Y
    dS/dt = Gr * Y/eps - S/tau_S

    with Gf, Gr the fossil/renewable shares from ``energy_shares``.
    Accepts HesState/HesControl or arrays with trailing dims (..., 3) and
    (..., 2); broadcasts over leading dimensions.
    """
    if isinstance(x, HesState):
        x = x.as_array()
    if isinstance(u, HesControl):
        u = u.as_array()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if not (np.all(np.isfinite(x)) and np.all(np.isfinite(u))):
        raise ValueError("ays_rhs requires finite state and control")
    if np.any(np.maximum(np.abs(u[..., 1]), np.abs(x[..., 2])) == 0.0):
        raise ValueError("degenerate fraction: sigma^rho + S^rho = 0 (sigma = S = 0)")
    return _rhs_core(x, u, p)


def rk4_step(rhs: Callable, x, u, h: float) -> np.ndarray:
    """One classical 4th-order Runge-Kutta step of ``rhs(x, u)`` with the
    control held constant over the step.

    Raises IntegrationError (carrying the stage index) if any stage
    produces a non-finite value.
    """
    if h <= 0.0:
        raise ValueError(f"step size h must be positive, got {h!r}")
    if isinstance(x, HesState):
        x = x.as_array()
    if isinstance(u, HesControl):
        u = u.as_array()
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    k1 = np.asarray(rhs(x, u))
    if not np.all(np.isfinite(k1)):
        raise IntegrationError("non-finite RK4 stage 1", stage=1)
    k2 = np.asarray(rhs(x + 0.5 * h * k1, u))
    if not np.all(np.isfinite(k2)):
        raise IntegrationError("non-finite RK4 stage 2", stage=2)
    k3 = np.asarray(rhs(x + 0.5 * h * k2, u))
    if not np.all(np.isfinite(k3)):
        raise IntegrationError("non-finite RK4 stage 3", stage=3)
    k4 = np.asarray(rhs(x + h * k3, u))
    if not np.all(np.isfinite(k4)):
        raise IntegrationError("non-finite RK4 stage 4", stage=4)
    return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def _control_at(controls, step: int, n_steps: int) -> np.ndarray:
    """Resolve a control schedule entry for a given step.

    Accepts a single HesControl (held constant), an array of shape
    (n_steps, m) or (m,), or a callable step -> control.
    """
    if isinstance(controls, HesControl):
        return controls.as_array()
    if callable(controls):
        u = controls(step)
        return u.as_array() if isinstance(u, HesControl) else np.asarray(u, dtype=float)
    arr = np.asarray(controls, dtype=float)
    if arr.ndim == 1:
        return arr
    if len(arr) < n_steps:
        raise ValueError(f"control schedule has {len(arr)} entries, needs {n_steps}")
    return arr[step]


def simulate(rhs: Callable, x0, controls, h: float, n_steps: int, t0: float = 0.0) -> Trajectory:
    """Roll the dynamics forward n_steps RK4 steps under a zero-order-hold
    control schedule and record the full path.

    ``controls`` may be a single HesControl, an (n_steps, 2) array, or a
    callable step -> control. Integration errors are re-raised with the
    offending step index attached.
    """
    if n_steps < 0:
        raise ValueError("n_steps must be non-negative")
    x = x0.as_array() if isinstance(x0, HesState) else np.asarray(x0, dtype=float)
    m = _control_at(controls, 0, max(n_steps, 1)).shape[-1] if n_steps > 0 else 2
    states = np.empty((n_steps + 1, x.shape[-1]))
    applied = np.empty((n_steps, m))
    states[0] = x
    for k in range(n_steps):
        u = _control_at(controls, k, n_steps)
        try:
            x = rk4_step(rhs, x, u, h)
        except IntegrationError as err:
            raise IntegrationError(f"{err} at step {k}", stage=err.stage, step=k) from err
        if not np.all(np.isfinite(x)):
            raise IntegrationError("non-finite state after RK4 step", step=k)
        states[k + 1] = x
        applied[k] = u
    times = t0 + h * np.arange(n_steps + 1)
    return Trajectory(times=times, states=states, controls=applied)


def make_ays_transition(params: AysParams, h: float):
    """Discrete stage map x(t+1) = RK4(x(t), u(t)) of the AYS model.

    This is the lenient rollout path for optimization: no validation, no
    raising; non-finite values propagate as nan so a line search can reject
    a diverging candidate. The arithmetic is the same expression used by the
    checked ``rk4_step``/``ays_rhs`` pair, so both paths agree bit for bit
    on finite inputs.
    """
    if h <= 0.0:
        raise ValueError(f"step size h must be positive, got {h!r}")

    def transition(x, u):
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        k1 = _rhs_core(x, u, params)
        k2 = _rhs_core(x + 0.5 * h * k1, u, params)
        k3 = _rhs_core(x + 0.5 * h * k2, u, params)
        k4 = _rhs_core(x + h * k3, u, params)
        return x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)

    return transition


def perturb_params(p: AysParams, delta_max: float, seed: int) -> AysParams:
    """Multiply (theta, eps_energy, phi_fossil) by independent factors
    drawn uniformly from [1-delta_max, 1+delta_max]; tau_A, tau_S, rho are
    never altered. Deterministic in the seed.
    """
    if not 0.0 <= delta_max < 1.0:
        raise ValueError(f"delta_max must be in [0, 1), got {delta_max!r}")
    rng = np.random.default_rng(seed)
    f_theta, f_eps, f_phi = rng.uniform(1.0 - delta_max, 1.0 + delta_max, size=3)
    return AysParams(
        theta=p.theta * f_theta,
        eps_energy=p.eps_energy * f_eps,
        phi_fossil=p.phi_fossil * f_phi,
        tau_A=p.tau_A,
        tau_S=p.tau_S,
        rho=p.rho,
    )
