"""Inner control loop: feedback-based optimization of actuators.

An actuator map turns reference commands r into realized inputs u = a(r).
The inner loop drives r by projected gradient descent on the cost
||u* - u||^2 + alpha*||r||^2, evaluating the gradient with the *measured*
actuator output in place of the model prediction, so a biased model still
converges to the setpoint whenever it is reachable.

Includes the toy stratospheric-aerosol actuator: four injection rates map
linearly to aerosol-optical-depth coefficients and on to the temperature
pattern coefficients, both expressed in the first three Legendre
polynomials of sin(latitude).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np


@dataclass(frozen=True)
class ReferenceBox:
    """Box of admissible reference signals."""

    lower: tuple
    upper: tuple

    def __post_init__(self):
        lo = tuple(float(v) for v in self.lower)
        hi = tuple(float(v) for v in self.upper)
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)
        if len(lo) != len(hi) or not all(a <= b for a, b in zip(lo, hi)):
            raise ValueError("invalid reference box")

    @property
    def dim(self) -> int:
        return len(self.lower)

    def as_arrays(self):
        return np.array(self.lower), np.array(self.upper)

    def project(self, r) -> np.ndarray:
        lo, hi = self.as_arrays()
        return np.clip(np.asarray(r, dtype=float), lo, hi)

    def contains(self, r, atol: float = 0.0) -> bool:
        lo, hi = self.as_arrays()
        r = np.asarray(r, dtype=float)
        return bool(np.all(r >= lo - atol) and np.all(r <= hi + atol))


@dataclass(frozen=True)
class ActuatorMap:
    """Actuator abstraction: nominal behavior, its Jacobian, the true plant.

    ``behavior`` is the controller's model r -> u, ``model_jacobian`` its
    Jacobian r -> du/dr, and ``plant_behavior`` the map the physical system
    actually implements (may differ from the model). All three must be
    defined on the whole reference box.
    """

    behavior: Callable
    reference_set: ReferenceBox
    model_jacobian: Callable
    plant_behavior: Callable


def identity_actuator(box: ReferenceBox, plant_gain: float = 1.0) -> ActuatorMap:
    """Identity model u = r with an optional multiplicative plant gain error
    (the affine-with-gain-error actuator at gain != 1)."""
    dim = box.dim
    eye = np.eye(dim)
    return ActuatorMap(
        behavior=lambda r: np.asarray(r, dtype=float).copy(),
        reference_set=box,
        model_jacobian=lambda r: eye,
        plant_behavior=lambda r: plant_gain * np.asarray(r, dtype=float),
    )


def linear_actuator(model_matrix, box: ReferenceBox, plant_matrix=None) -> ActuatorMap:
    """Linear actuator u = M r; the plant may use a different matrix."""
    M = np.asarray(model_matrix, dtype=float)
    Mp = M if plant_matrix is None else np.asarray(plant_matrix, dtype=float)
    if M.shape != Mp.shape or M.shape[1] != box.dim:
        raise ValueError("dimension mismatch between actuator matrices and reference box")
    return ActuatorMap(
        behavior=lambda r: M @ np.asarray(r, dtype=float),
        reference_set=box,
        model_jacobian=lambda r: M,
        plant_behavior=lambda r: Mp @ np.asarray(r, dtype=float),
    )


@dataclass(frozen=True)
class InnerLoopConfig:
    """Knobs of the projected-gradient reference update: regularization
    weight alpha, step size (None selects 0.4/L with L estimated by power
    iteration on the nominal model), iteration cap, and the convergence
    tolerance on ||r(t+1) - r(t)||."""

    alpha: float = 0.0
    step_size: float | None = None
    max_iters: int = 500
    tol: float = 1e-8

    def __post_init__(self):
        if self.alpha < 0.0:
            raise ValueError("alpha must be non-negative")
        if self.step_size is not None and self.step_size <= 0.0:
            raise ValueError("step_size must be positive")
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iters < 1:
            raise ValueError("max_iters must be >= 1")


def inner_cost(u_star, u, r, alpha: float) -> float:
    """Tracking-plus-regularization cost ||u* - u||^2 + alpha*||r||^2."""
    u_star = np.asarray(u_star, dtype=float)
    u = np.asarray(u, dtype=float)
    if u_star.shape != u.shape:
        raise ValueError(f"setpoint shape {u_star.shape} != output shape {u.shape}")
    r = np.asarray(r, dtype=float)
    diff = u_star - u
    return float(diff @ diff + alpha * (r @ r))


def default_step_size(actuator: ActuatorMap, alpha: float, r0=None, n_power_iters: int = 100) -> float:
    """0.4/L with L = lambda_max(J^T J + alpha I) estimated by power
    iteration on the nominal model Jacobian at r0 (box midpoint by default).
    Guarantees descent on the linear-actuator cost."""
    lo, hi = actuator.reference_set.as_arrays()
    r0 = 0.5 * (lo + hi) if r0 is None else np.asarray(r0, dtype=float)
    J = np.asarray(actuator.model_jacobian(r0), dtype=float)
    v = np.ones(J.shape[1]) / np.sqrt(J.shape[1])
    lam = alpha
    for _ in range(n_power_iters):
        w = J.T @ (J @ v) + alpha * v
        norm = float(np.linalg.norm(w))
        if norm == 0.0:
            break
        lam = norm
        v = w / norm
    if lam <= 0.0:
        raise ValueError("could not estimate a positive curvature bound for the step size")
    return 0.4 / lam


def pgd_update(r, u_star, u_meas, actuator: ActuatorMap, cfg: InnerLoopConfig) -> np.ndarray:
    """One projected-gradient reference update
    r+ = proj[ r - eps*(-2 J(r)^T (u* - u_meas) + 2*alpha*r) ]
    with the measured output u_meas as the feedback signal and the nominal
    model Jacobian J. Requires r inside the reference box."""
    r = np.asarray(r, dtype=float)
    if not actuator.reference_set.contains(r):
        raise ValueError("reference r lies outside the reference set")
    u_star = np.asarray(u_star, dtype=float)
    u_meas = np.asarray(u_meas, dtype=float)
    if u_star.shape != u_meas.shape:
        raise ValueError("setpoint and measured output dimensions differ")
    J = np.asarray(actuator.model_jacobian(r), dtype=float)
    grad = -2.0 * (J.T @ (u_star - u_meas)) + 2.0 * cfg.alpha * r
    eps = cfg.step_size if cfg.step_size is not None else default_step_size(actuator, cfg.alpha, r)
    return actuator.reference_set.project(r - eps * grad)


@dataclass(frozen=True)
class InnerLoopRun:
    """Iterate history of one inner-loop run. ``references`` has one row per
    recorded iterate (including the final one), ``outputs`` the matching
    measured actuator outputs, ``costs`` the inner cost at each iterate."""

    r_final: np.ndarray
    references: np.ndarray
    outputs: np.ndarray
    costs: np.ndarray
    converged: bool
    n_iters: int


def run_inner_loop(u_star, r0, actuator: ActuatorMap, cfg: InnerLoopConfig) -> InnerLoopRun:
    """Iterate ``pgd_update`` against the plant until the reference moves
    less than cfg.tol or the iteration cap is reached (reported via the
    ``converged`` flag, never raised). Every iterate and its measured
    output are recorded."""
    r = np.asarray(r0, dtype=float)
    if not actuator.reference_set.contains(r):
        raise ValueError("initial reference r0 lies outside the reference set")
    u_star = np.asarray(u_star, dtype=float)
    cfg = cfg if cfg.step_size is not None else InnerLoopConfig(
        alpha=cfg.alpha, step_size=default_step_size(actuator, cfg.alpha, r),
        max_iters=cfg.max_iters, tol=cfg.tol)
    refs, outs, costs = [], [], []
    converged = False
    n_iters = 0
    for n_iters in range(1, cfg.max_iters + 1):
        u_meas = np.asarray(actuator.plant_behavior(r), dtype=float)
        refs.append(r.copy())
        outs.append(u_meas)
        costs.append(inner_cost(u_star, u_meas, r, cfg.alpha))
        r_next = pgd_update(r, u_star, u_meas, actuator, cfg)
        moved = float(np.linalg.norm(r_next - r))
        r = r_next
        if moved < cfg.tol:
            converged = True
            break
    u_final = np.asarray(actuator.plant_behavior(r), dtype=float)
    refs.append(r.copy())
    outs.append(u_final)
    costs.append(inner_cost(u_star, u_final, r, cfg.alpha))
    return InnerLoopRun(r_final=r, references=np.asarray(refs), outputs=np.asarray(outs),
                        costs=np.asarray(costs), converged=converged, n_iters=n_iters)


# ---------------------------------------------------------------------------
# Legendre field decomposition and the SAI actuator
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class LegendreCoeffs:
    """Projections of a zonal field onto L0 = 1, L1 = sin(psi),
    L2 = (3 sin^2(psi) - 1)/2."""

    c0: float
    c1: float
    c2: float

    def __post_init__(self):
        for v in (self.c0, self.c1, self.c2):
            if not np.isfinite(v):
                raise ValueError("Legendre coefficients must be finite")

    def as_array(self) -> np.ndarray:
        return np.array([self.c0, self.c1, self.c2], dtype=float)


def legendre_basis(psi) -> np.ndarray:
    """Stack [L0, L1, L2] evaluated at latitude psi [rad]; shape (..., 3)."""
    psi = np.asarray(psi, dtype=float)
    if np.any(np.abs(psi) > np.pi / 2 + 1e-12):
        raise ValueError("latitude must lie in [-pi/2, pi/2]")
    s = np.sin(psi)
    return np.stack([np.ones_like(s), s, 0.5 * (3.0 * s**2 - 1.0)], axis=-1)


def legendre_eval(psi, c: LegendreCoeffs):
    """Field value c0*L0(psi) + c1*L1(psi) + c2*L2(psi)."""
    basis = legendre_basis(psi)
    return basis @ c.as_array() if basis.ndim > 1 else float(basis @ c.as_array())


def legendre_project(samples) -> LegendreCoeffs:
    """Least-squares fit of (c0, c1, c2) to (psi, value) samples.

    Needs at least three samples with three distinct sin(psi) values;
    rank-deficient sample sets are rejected.
    """
    arr = np.asarray(list(samples), dtype=float)
    if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
        raise ValueError("need at least 3 (psi, value) samples")
    psi, values = arr[:, 0], arr[:, 1]
    design = legendre_basis(psi)
    if np.linalg.matrix_rank(design) < 3:
        raise ValueError("rank-deficient sample set: need 3 distinct sin(psi) values")
    coeffs, *_ = np.linalg.lstsq(design, values, rcond=None)
    return LegendreCoeffs(float(coeffs[0]), float(coeffs[1]), float(coeffs[2]))


# Injection latitudes of the four-point SAI pattern: 30N, 15N, 15S, 30S.
SAI_INJECTION_LATITUDES_DEG = (30.0, 15.0, -15.0, -30.0)


def default_sai_matrices():
    """Synthetic full-rank (phi, xi) pair for tests and demos.

    phi maps the four injection rates (30N, 15N, 15S, 30S) to AOD Legendre
    coefficients: its rows are a constant, an odd (interhemispheric) and an
    even (equator-to-pole) pattern, so constant, linear and quadratic AOD
    shapes are all reachable. xi maps AOD coefficients to temperature
    pattern coefficients: aerosols cool (negative diagonal) with mild
    cross-coupling. The composition is deliberately well conditioned
    (condition number ~4) so demos converge briskly; real maps would be
    learned from simulations and supplied via configuration.
    """
    phi = np.array([
        [0.3, 0.3, 0.3, 0.3],
        [0.5, 0.2, -0.2, -0.5],
        [-0.2, 0.4, 0.4, -0.2],
    ])
    xi = np.array([
        [-3.2, -0.3, 0.0],
        [-0.2, -1.1, -0.1],
        [0.0, -0.2, -0.8],
    ])
    return phi, xi


def make_sai_actuator(phi_matrix, xi_matrix, plant_phi=None, plant_xi=None,
                      bounds: ReferenceBox | None = None) -> ActuatorMap:
    """Stratospheric-aerosol actuator: injection rates r (4,) -> AOD
    coefficients (3,) via phi -> temperature coefficients (3,) via xi.

    The model behavior is r -> xi @ (phi @ r) with constant Jacobian
    xi @ phi; the plant uses the true matrices (defaulting to the model's).
    """
    phi = np.asarray(phi_matrix, dtype=float)
    xi = np.asarray(xi_matrix, dtype=float)
    p_phi = phi if plant_phi is None else np.asarray(plant_phi, dtype=float)
    p_xi = xi if plant_xi is None else np.asarray(plant_xi, dtype=float)
    if phi.shape != (3, 4) or xi.shape != (3, 3):
        raise ValueError(f"dimension mismatch: phi must be 3x4 and xi 3x3, got {phi.shape} and {xi.shape}")
    if p_phi.shape != (3, 4) or p_xi.shape != (3, 3):
        raise ValueError("dimension mismatch in plant matrices")
    if bounds is None:
        bounds = ReferenceBox(lower=(0.0,) * 4, upper=(10.0,) * 4)
    if bounds.dim != 4:
        raise ValueError("SAI reference box must be 4-dimensional (one rate per injection site)")
    return ActuatorMap(
        behavior=lambda r: xi @ (phi @ np.asarray(r, dtype=float)),
        reference_set=bounds,
        model_jacobian=lambda r: xi @ phi,
        plant_behavior=lambda r: p_xi @ (p_phi @ np.asarray(r, dtype=float)),
    )
