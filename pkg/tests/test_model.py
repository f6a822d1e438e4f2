"""Model-core tests: AYS right-hand side against independent arithmetic,
RK4 order checks against closed-form solutions, simulation contracts, and
the parameter perturbation."""

import math

import numpy as np
import pytest

from hes_loop.model import (
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

X0 = HesState(840.0, 7e13, 5e11)
U0 = HesControl(0.03, 5e12)
NOMINAL = AysParams()


def rhs_oracle(A, Y, S, beta, sigma, p):
    """The model equations spelled out in plain python arithmetic,
    independently of the vectorized implementation."""
    frac_f = sigma**p.rho / (sigma**p.rho + S**p.rho)
    frac_r = S**p.rho / (sigma**p.rho + S**p.rho)
    dA = frac_f * Y / (p.eps_energy * p.phi_fossil) - A / p.tau_A
    dY = (beta - p.theta * A) * Y
    dS = frac_r * Y / p.eps_energy - S / p.tau_S
    return dA, dY, dS


class TestAysRhs:
    def test_zero_state_gives_zero_rates(self):
        d = ays_rhs(HesState(0.0, 0.0, 0.0), U0, NOMINAL)
        assert np.array_equal(d, np.zeros(3))

    def test_initial_condition_against_oracle(self):
        d = ays_rhs(X0, U0, NOMINAL)
        expected = rhs_oracle(840.0, 7e13, 5e11, 0.03, 5e12, NOMINAL)
        for got, want in zip(d, expected):
            assert got == pytest.approx(want, rel=1e-12)
        # frozen digits, derived by direct evaluation of the model equations
        assert d[0] == pytest.approx(-6.76860172, rel=1e-8)
        assert d[1] == pytest.approx(-2.93916e12, rel=1e-8)
        assert d[2] == pytest.approx(-5.28524281e9, rel=1e-8)

    def test_growth_balance_beta_equals_damage(self):
        beta = NOMINAL.theta * 840.0  # 0.071988
        d = ays_rhs(X0, HesControl(beta, 5e12), NOMINAL)
        assert d[1] == 0.0

    def test_random_pairs_against_oracle(self):
        rng = np.random.default_rng(1234)
        for _ in range(100):
            A = rng.uniform(0.0, 2000.0)
            Y = rng.uniform(1e12, 2e14)
            S = 10.0 ** rng.uniform(9, 14)
            beta = rng.uniform(-0.05, 0.05)
            sigma = 10.0 ** rng.uniform(9, 14)
            d = ays_rhs(np.array([A, Y, S]), np.array([beta, sigma]), NOMINAL)
            want = rhs_oracle(A, Y, S, beta, sigma, NOMINAL)
            for got, w in zip(d, want):
                assert got == pytest.approx(w, rel=1e-10, abs=1e-300)

    def test_dY_homogeneous_in_Y(self):
        rng = np.random.default_rng(7)
        for _ in range(50):
            x = np.array([rng.uniform(0, 1000), rng.uniform(1e12, 1e14), 10 ** rng.uniform(10, 13)])
            u = np.array([rng.uniform(-0.05, 0.05), 10 ** rng.uniform(10, 13)])
            d1 = ays_rhs(x, u, NOMINAL)
            x2 = x.copy()
            x2[1] *= 2.0
            d2 = ays_rhs(x2, u, NOMINAL)
            assert d2[1] == 2.0 * d1[1]

    def test_degenerate_fraction_rejected(self):
        with pytest.raises(ValueError, match="degenerate"):
            ays_rhs(HesState(1.0, 1.0, 0.0), HesControl(0.0, 0.0), NOMINAL)

    def test_non_finite_input_rejected(self):
        with pytest.raises(ValueError):
            ays_rhs(np.array([np.nan, 1.0, 1.0]), U0.as_array(), NOMINAL)

    def test_batch_matches_scalar(self):
        rng = np.random.default_rng(5)
        xs = np.column_stack([rng.uniform(0, 1000, 8), rng.uniform(1e12, 1e14, 8), rng.uniform(1e10, 1e13, 8)])
        us = np.column_stack([rng.uniform(-0.05, 0.05, 8), rng.uniform(1e10, 1e13, 8)])
        batch = ays_rhs(xs, us, NOMINAL)
        for i in range(8):
            assert np.array_equal(batch[i], ays_rhs(xs[i], us[i], NOMINAL))


class TestEnergyShares:
    def test_shares_sum_to_one(self):
        rng = np.random.default_rng(99)
        sigma = 10.0 ** rng.uniform(-6, 14, size=2000)
        S = 10.0 ** rng.uniform(-6, 14, size=2000)
        f, r = energy_shares(sigma, S, 2.0)
        assert np.all(np.abs(f + r - 1.0) <= 1e-12)

    def test_extreme_magnitudes_do_not_overflow(self):
        f, r = energy_shares(1e300, 1e290, 2.0)
        assert math.isfinite(f) and math.isfinite(r)
        assert f + r == pytest.approx(1.0, abs=1e-12)

    def test_both_zero_rejected(self):
        with pytest.raises(ValueError):
            energy_shares(0.0, 0.0, 2.0)


class TestRk4:
    def test_zero_field_keeps_state(self):
        x = X0.as_array()
        out = rk4_step(lambda xs, us: np.zeros(3), x, U0.as_array(), 1.0)
        assert np.array_equal(out, x)

    def test_exponential_one_step(self):
        out = rk4_step(lambda x, u: -x, np.array([1.0]), np.zeros(1), 0.1)
        assert out[0] == pytest.approx(math.exp(-0.1), abs=1e-7)

    def test_one_step_error_ratio_on_ays(self):
        # Richardson: error at t=h via one h-step vs two h/2-steps, against
        # a 10-substep reference; 4th order gives a ratio near 16.
        h = 1.0
        p = NOMINAL
        rhs = lambda x, u: ays_rhs(x, u, p)
        x = X0.as_array()
        u = U0.as_array()
        coarse = rk4_step(rhs, x, u, h)
        fine = rk4_step(rhs, rk4_step(rhs, x, u, h / 2), u, h / 2)
        ref = x.copy()
        for _ in range(10):
            ref = rk4_step(rhs, ref, u, h / 10)
        scale = np.abs(ref) + 1.0
        e_coarse = np.max(np.abs(coarse - ref) / scale)
        e_fine = np.max(np.abs(fine - ref) / scale)
        assert 12.0 <= e_coarse / e_fine <= 20.0

    def test_global_order_on_exponential(self):
        def global_error(h):
            x = np.array([1.0])
            for _ in range(int(round(1.0 / h))):
                x = rk4_step(lambda xs, us: -xs, x, np.zeros(1), h)
            return abs(x[0] - math.exp(-1.0))

        ratio = global_error(0.1) / global_error(0.05)
        assert 12.0 <= ratio <= 20.0

    def test_non_finite_stage_carries_index(self):
        def bad_rhs(x, u):
            return np.full(3, np.inf)

        with pytest.raises(IntegrationError) as err:
            rk4_step(bad_rhs, X0.as_array(), U0.as_array(), 1.0)
        assert err.value.stage == 1

    def test_non_positive_step_rejected(self):
        with pytest.raises(ValueError):
            rk4_step(lambda x, u: -x, np.array([1.0]), np.zeros(1), 0.0)

    def test_fast_transition_matches_checked_path(self):
        f = make_ays_transition(NOMINAL, 1.0)
        rhs = lambda x, u: ays_rhs(x, u, NOMINAL)
        x, u = X0.as_array(), U0.as_array()
        for _ in range(5):
            assert np.array_equal(f(x, u), rk4_step(rhs, x, u, 1.0))
            x = f(x, u)


class TestSimulate:
    def setup_method(self):
        self.rhs = lambda x, u: ays_rhs(x, u, NOMINAL)

    def test_zero_steps_returns_initial_state(self):
        tr = simulate(self.rhs, X0, U0, 1.0, 0)
        assert len(tr) == 1
        assert np.array_equal(tr.states[0], X0.as_array())
        assert tr.controls.shape == (0, 2)

    def test_constant_zero_field(self):
        tr = simulate(lambda x, u: np.zeros(3), X0, U0, 1.0, 5)
        assert np.all(tr.states == X0.as_array())

    def test_carbon_decreasing_first_decade(self):
        tr = simulate(self.rhs, X0, U0, 1.0, 10)
        assert np.all(np.diff(tr.states[:, 0]) < 0.0)

    def test_bit_stable_across_calls(self):
        rng = np.random.default_rng(3)
        schedule = np.column_stack([rng.uniform(-0.05, 0.05, 20), rng.uniform(1e11, 1e13, 20)])
        a = simulate(self.rhs, X0, schedule, 1.0, 20)
        b = simulate(self.rhs, X0, schedule, 1.0, 20)
        assert np.array_equal(a.states, b.states)
        assert np.array_equal(a.times, b.times)
        assert np.array_equal(a.controls, b.controls)

    def test_schedule_as_callable(self):
        tr = simulate(self.rhs, X0, lambda k: HesControl(0.03, 5e12), 1.0, 3)
        assert np.all(tr.controls[:, 1] == 5e12)

    def test_error_carries_step_index(self):
        calls = {"n": 0}

        def flaky(x, u):
            calls["n"] += 1
            if calls["n"] > 8:  # fail somewhere inside step 2
                return np.full(3, np.nan)
            return np.zeros(3)

        with pytest.raises(IntegrationError) as err:
            simulate(flaky, X0, U0, 1.0, 5)
        assert err.value.step == 2

    def test_short_schedule_rejected(self):
        with pytest.raises(ValueError, match="entries"):
            simulate(self.rhs, X0, np.ones((2, 2)), 1.0, 5)


class TestPerturbParams:
    def test_zero_delta_is_identity(self):
        assert perturb_params(NOMINAL, 0.0, 123) == NOMINAL

    def test_deterministic_in_seed(self):
        assert perturb_params(NOMINAL, 0.2, 42) == perturb_params(NOMINAL, 0.2, 42)

    def test_seed_sweep_within_bounds_and_time_constants_fixed(self):
        for seed in range(1000):
            p = perturb_params(NOMINAL, 0.2, seed)
            assert 0.8 * NOMINAL.theta <= p.theta <= 1.2 * NOMINAL.theta
            assert 0.8 * NOMINAL.eps_energy <= p.eps_energy <= 1.2 * NOMINAL.eps_energy
            assert 0.8 * NOMINAL.phi_fossil <= p.phi_fossil <= 1.2 * NOMINAL.phi_fossil
            assert p.tau_A == NOMINAL.tau_A
            assert p.tau_S == NOMINAL.tau_S
            assert p.rho == NOMINAL.rho

    def test_delta_out_of_range_rejected(self):
        with pytest.raises(ValueError):
            perturb_params(NOMINAL, 1.0, 0)
        with pytest.raises(ValueError):
            perturb_params(NOMINAL, -0.1, 0)


class TestTypes:
    def test_state_requires_finite(self):
        with pytest.raises(ValueError):
            HesState(np.nan, 1.0, 1.0)

    def test_state_physicality_flag(self):
        assert HesState(1.0, 1.0, 1.0).is_physical
        assert not HesState(-1.0, 1.0, 1.0).is_physical

    def test_control_rejects_negative_sigma(self):
        with pytest.raises(ValueError):
            HesControl(0.0, -1.0)

    def test_params_must_be_positive(self):
        with pytest.raises(ValueError):
            AysParams(theta=0.0)

    def test_trajectory_invariants(self):
        with pytest.raises(ValueError, match="increasing"):
            Trajectory(times=np.array([0.0, 0.0]), states=np.zeros((2, 3)), controls=np.zeros((1, 2)))
        with pytest.raises(ValueError, match="len"):
            Trajectory(times=np.array([0.0, 1.0]), states=np.zeros((3, 3)), controls=np.zeros((1, 2)))

    def test_round_trip_arrays(self):
        assert HesState.from_array(X0.as_array()) == X0
        assert HesControl.from_array(U0.as_array()) == U0
