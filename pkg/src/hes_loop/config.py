"""JSON experiment configuration: parsing, validation, defaults, round trip.

The schema is flat sections of plain JSON types. Unknown keys are rejected
with the offending key named; absent keys take the documented defaults and
are echoed to the log so a run's effective configuration is always visible.
"""

from __future__ import annotations

import json
import logging
from pathlib import Path

from .harness import ExperimentConfig
from .model import AysParams, HesControl, HesState
from .outer_loop import ControlBounds, CostWeights, SolverOptions, StateLimits

log = logging.getLogger("hes_loop")


class ConfigError(ValueError):
    """A configuration file failed to parse or validate."""


_TOP_LEVEL_KEYS = {
    "seed", "delta_max", "sim_years", "step_h_yr", "measurement_period_yr",
    "mpc_horizon_stages", "mpc_mode", "mode", "initial_state", "u_ref",
    "params", "weights", "bounds", "state_limits", "penalty_weight",
    "solver", "mpc_solver", "inner", "sai", "delay_max_lag_yr",
    "stage_cost", "out_dir",
}

_SECTION_KEYS = {
    "initial_state": {"A", "Y", "S"},
    "u_ref": {"beta", "sigma"},
    "params": {"theta", "eps_energy", "phi_fossil", "tau_A", "tau_S", "rho"},
    "weights": {"lam", "mu", "nu", "w_beta", "w_sigma"},
    "bounds": {"beta_min", "beta_max", "sigma_min", "sigma_max"},
    "state_limits": {"A_max", "Y_min"},
    "solver": {"max_iters", "grad_tol", "cost_tol", "step0", "max_halvings", "fd_rel_step"},
    "mpc_solver": {"max_iters", "grad_tol", "cost_tol", "step0", "max_halvings", "fd_rel_step"},
    "inner": {"alpha", "step_size", "max_iters", "tol", "u_star", "r0", "plant_gain", "r_min", "r_max"},
    "sai": {"model_phi", "model_xi", "plant_phi", "plant_xi", "plant_scale", "r_min", "r_max", "u_star", "r0"},
    "stage_cost": {"kind", "eta", "population", "discount"},
}

# Inner-loop demo defaults mirror the gain-error robustness setup: identity
# model, 1.2x plant, scalar setpoint 1.
INNER_DEMO_DEFAULTS = {
    "alpha": 0.0,
    "step_size": None,
    "max_iters": 500,
    "tol": 1e-9,
    "u_star": [1.0],
    "r0": [0.0],
    "plant_gain": 1.2,
    "r_min": [-10.0],
    "r_max": [10.0],
}

SAI_DEMO_DEFAULTS = {
    "model_phi": None,  # None -> default_sai_matrices()
    "model_xi": None,
    "plant_phi": None,  # None -> plant_scale * model
    "plant_xi": None,
    "plant_scale": 1.15,
    "r_min": [0.0, 0.0, 0.0, 0.0],
    "r_max": [10.0, 10.0, 10.0, 10.0],
    "u_star": None,  # None -> plant output at an interior reference
    "r0": [1.0, 1.0, 1.0, 1.0],
}


def _check_keys(data: dict, allowed: set, where: str) -> None:
    for key in data:
        if key not in allowed:
            raise ConfigError(f"unknown key {where}{key!r}")


def _section(data: dict, name: str) -> dict:
    sub = data.get(name, {})
    if not isinstance(sub, dict):
        raise ConfigError(f"section {name!r} must be an object")
    _check_keys(sub, _SECTION_KEYS[name], f"{name}.")
    return sub


def _get(sub: dict, key: str, default, where: str):
    if key in sub:
        return sub[key]
    log.info("config: %s%s absent, default %r applied", where, key, default)
    return default


def parse_config_dict(data: dict) -> ExperimentConfig:
    """Validate a parsed JSON object and build the ExperimentConfig."""
    if not isinstance(data, dict):
        raise ConfigError("top-level config must be a JSON object")
    _check_keys(data, _TOP_LEVEL_KEYS, "")

    try:
        x0s = _section(data, "initial_state")
        x0 = HesState(
            A=float(_get(x0s, "A", 840.0, "initial_state.")),
            Y=float(_get(x0s, "Y", 7e13, "initial_state.")),
            S=float(_get(x0s, "S", 5e11, "initial_state.")),
        )
        urs = _section(data, "u_ref")
        u_ref = HesControl(
            beta=float(_get(urs, "beta", 0.03, "u_ref.")),
            sigma=float(_get(urs, "sigma", 5e12, "u_ref.")),
        )
        ps = _section(data, "params")
        nominal = AysParams(
            theta=float(_get(ps, "theta", 8.57e-5, "params.")),
            eps_energy=float(_get(ps, "eps_energy", 147.0, "params.")),
            phi_fossil=float(_get(ps, "phi_fossil", 4.7e10, "params.")),
            tau_A=float(_get(ps, "tau_A", 50.0, "params.")),
            tau_S=float(_get(ps, "tau_S", 50.0, "params.")),
            rho=float(_get(ps, "rho", 2.0, "params.")),
        )
        ws = _section(data, "weights")
        dw = CostWeights()
        weights = CostWeights(
            lam=float(_get(ws, "lam", dw.lam, "weights.")),
            mu=float(_get(ws, "mu", dw.mu, "weights.")),
            nu=float(_get(ws, "nu", dw.nu, "weights.")),
            w_beta=float(_get(ws, "w_beta", dw.w_beta, "weights.")),
            w_sigma=float(_get(ws, "w_sigma", dw.w_sigma, "weights.")),
        )
        bs = _section(data, "bounds")
        bounds = ControlBounds(
            lower=(float(_get(bs, "beta_min", -0.05, "bounds.")), float(_get(bs, "sigma_min", 0.0, "bounds."))),
            upper=(float(_get(bs, "beta_max", 0.05, "bounds.")), float(_get(bs, "sigma_max", 5e13, "bounds."))),
        )
        ls = _section(data, "state_limits")
        limits = StateLimits(
            A_max=float(_get(ls, "A_max", 345.0, "state_limits.")),
            Y_min=float(_get(ls, "Y_min", 4e13, "state_limits.")),
        )
        defaults = ExperimentConfig()
        solver = _solver_options(_section(data, "solver"), defaults.solver, "solver.")
        mpc_solver = _solver_options(_section(data, "mpc_solver"), defaults.mpc_solver, "mpc_solver.")
        sc = _section(data, "stage_cost")
        kind = str(_get(sc, "kind", "quadratic", "stage_cost."))
        welfare = None
        if kind == "welfare":
            for req in ("eta", "population", "discount"):
                if req not in sc:
                    raise ConfigError(f"stage_cost.{req} is required when kind is 'welfare'")
            welfare = {
                "eta": float(sc["eta"]),
                "population": tuple(float(v) for v in sc["population"]),
                "discount": tuple(float(v) for v in sc["discount"]),
            }
        elif set(sc) - {"kind"}:
            extra = sorted(set(sc) - {"kind"})[0]
            raise ConfigError(f"stage_cost.{extra!r} only applies when kind is 'welfare'")

        config = ExperimentConfig(
            seed=int(_get(data, "seed", 0, "")),
            delta_max=float(_get(data, "delta_max", 0.2, "")),
            sim_years=float(_get(data, "sim_years", 50.0, "")),
            step_h_yr=float(_get(data, "step_h_yr", 1.0, "")),
            measurement_period_yr=float(_get(data, "measurement_period_yr", 2.0, "")),
            mpc_horizon_stages=int(_get(data, "mpc_horizon_stages", 50, "")),
            mpc_mode=str(_get(data, "mpc_mode", "receding", "")),
            mode=str(_get(data, "mode", "both", "")),
            initial_state=x0,
            u_ref=u_ref,
            nominal_params=nominal,
            weights=weights,
            bounds=bounds,
            state_limits=limits,
            penalty_weight=float(_get(data, "penalty_weight", 1e-24, "")),
            solver=solver,
            mpc_solver=mpc_solver,
            delay_max_lag_yr=float(_get(data, "delay_max_lag_yr", 15.0, "")),
            stage_cost_kind=kind,
            welfare=welfare,
            inner={**INNER_DEMO_DEFAULTS, **_section(data, "inner")},
            sai={**SAI_DEMO_DEFAULTS, **_section(data, "sai")},
            out_dir=str(_get(data, "out_dir", "out", "")),
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return config


def _solver_options(sub: dict, defaults: SolverOptions, where: str) -> SolverOptions:
    try:
        return SolverOptions(
            max_iters=int(_get(sub, "max_iters", defaults.max_iters, where)),
            grad_tol=float(_get(sub, "grad_tol", defaults.grad_tol, where)),
            cost_tol=float(_get(sub, "cost_tol", defaults.cost_tol, where)),
            step0=float(_get(sub, "step0", defaults.step0, where)),
            max_halvings=int(_get(sub, "max_halvings", defaults.max_halvings, where)),
            fd_rel_step=float(_get(sub, "fd_rel_step", defaults.fd_rel_step, where)),
        )
    except ValueError as err:
        raise ConfigError(f"{where.rstrip('.')}: {err}") from err


def parse_config(path) -> ExperimentConfig:
    """Load and validate a JSON config file."""
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"config file not found: {path}")
    try:
        data = json.loads(path.read_text())
    except json.JSONDecodeError as err:
        raise ConfigError(f"{path}: invalid JSON at line {err.lineno} column {err.colno}: {err.msg}") from err
    return parse_config_dict(data)


def inner_demo_settings(config: ExperimentConfig) -> dict:
    return {**INNER_DEMO_DEFAULTS, **(config.inner or {})}


def sai_demo_settings(config: ExperimentConfig) -> dict:
    return {**SAI_DEMO_DEFAULTS, **(config.sai or {})}


def serialize_config(config: ExperimentConfig) -> dict:
    """The full effective configuration as a JSON-ready dict; parsing it
    back yields an equal config (round trip)."""
    data = {
        "seed": config.seed,
        "delta_max": config.delta_max,
        "sim_years": config.sim_years,
        "step_h_yr": config.step_h_yr,
        "measurement_period_yr": config.measurement_period_yr,
        "mpc_horizon_stages": config.mpc_horizon_stages,
        "mpc_mode": config.mpc_mode,
        "mode": config.mode,
        "initial_state": {"A": config.initial_state.A, "Y": config.initial_state.Y, "S": config.initial_state.S},
        "u_ref": {"beta": config.u_ref.beta, "sigma": config.u_ref.sigma},
        "params": {
            "theta": config.nominal_params.theta,
            "eps_energy": config.nominal_params.eps_energy,
            "phi_fossil": config.nominal_params.phi_fossil,
            "tau_A": config.nominal_params.tau_A,
            "tau_S": config.nominal_params.tau_S,
            "rho": config.nominal_params.rho,
        },
        "weights": {
            "lam": config.weights.lam,
            "mu": config.weights.mu,
            "nu": config.weights.nu,
            "w_beta": config.weights.w_beta,
            "w_sigma": config.weights.w_sigma,
        },
        "bounds": {
            "beta_min": config.bounds.lower[0],
            "beta_max": config.bounds.upper[0],
            "sigma_min": config.bounds.lower[1],
            "sigma_max": config.bounds.upper[1],
        },
        "state_limits": {"A_max": config.state_limits.A_max, "Y_min": config.state_limits.Y_min},
        "penalty_weight": config.penalty_weight,
        "solver": _solver_dict(config.solver),
        "mpc_solver": _solver_dict(config.mpc_solver),
        "delay_max_lag_yr": config.delay_max_lag_yr,
        "stage_cost": {"kind": config.stage_cost_kind},
        "out_dir": config.out_dir,
        "inner": inner_demo_settings(config),
        "sai": sai_demo_settings(config),
    }
    if config.stage_cost_kind == "welfare":
        data["stage_cost"].update(
            eta=config.welfare["eta"],
            population=list(config.welfare["population"]),
            discount=list(config.welfare["discount"]),
        )
    return data


def _solver_dict(opts: SolverOptions) -> dict:
    return {
        "max_iters": opts.max_iters,
        "grad_tol": opts.grad_tol,
        "cost_tol": opts.cost_tol,
        "step0": opts.step0,
        "max_halvings": opts.max_halvings,
        "fd_rel_step": opts.fd_rel_step,
    }
