"""Inner-loop tests: the projected-gradient reference update against
analytic fixed points, feedback rejection of actuator gain error, Legendre
projection against a normal-equations oracle, and the SAI composition."""

import numpy as np
import pytest

from hes_loop.inner_loop import (
    ActuatorMap,
    InnerLoopConfig,
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

BOX = ReferenceBox((-10.0,), (10.0,))


class TestInnerCost:
    def test_zero_at_exact_implementation(self):
        assert inner_cost(np.array([1.0, 2.0]), np.array([1.0, 2.0]), np.zeros(3), 0.5) == 0.0

    def test_weighted_sum(self):
        got = inner_cost(np.array([1.0, 0.0]), np.array([0.0, 0.0]), np.array([1.0, 1.0]), 0.5)
        assert got == pytest.approx(2.0)  # 1 + 0.5*2

    def test_alpha_zero_reduces_to_tracking(self):
        r = np.array([3.0, -4.0])
        got = inner_cost(np.array([2.0]), np.array([0.5]), r, 0.0)
        assert got == pytest.approx(1.5**2)

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError):
            inner_cost(np.array([1.0, 2.0]), np.array([1.0]), np.zeros(1), 0.0)

    def test_non_negative_random_sweep(self):
        rng = np.random.default_rng(13)
        for _ in range(100):
            c = inner_cost(rng.normal(size=3), rng.normal(size=3), rng.normal(size=2), rng.uniform(0, 2))
            assert c >= 0.0


class TestPgdUpdate:
    def test_stationary_at_setpoint_with_zero_alpha(self):
        act = identity_actuator(BOX)
        cfg = InnerLoopConfig(alpha=0.0, step_size=0.3)
        r = np.array([0.7])
        r_next = pgd_update(r, np.array([0.7]), np.array([0.7]), act, cfg)
        assert np.array_equal(r_next, r)

    def test_moves_downhill(self):
        act = identity_actuator(BOX)
        cfg = InnerLoopConfig(alpha=0.0, step_size=0.1)
        r = np.array([0.0])
        r_next = pgd_update(r, np.array([1.0]), np.array([0.0]), act, cfg)
        assert r_next[0] == pytest.approx(0.2)  # r + eps*2*(u*-u)

    def test_output_stays_in_reference_set(self):
        act = identity_actuator(ReferenceBox((0.0,), (1.0,)))
        cfg = InnerLoopConfig(alpha=0.0, step_size=5.0)
        r_next = pgd_update(np.array([0.9]), np.array([100.0]), np.array([0.9]), act, cfg)
        assert r_next[0] == 1.0

    def test_outside_reference_set_rejected(self):
        act = identity_actuator(ReferenceBox((0.0,), (1.0,)))
        with pytest.raises(ValueError, match="outside"):
            pgd_update(np.array([2.0]), np.array([1.0]), np.array([2.0]), act, InnerLoopConfig(step_size=0.1))


class TestRunInnerLoop:
    def test_regularized_fixed_point(self):
        # minimizer of (u*-r)^2 + alpha*r^2 is u*/(1+alpha)
        run = run_inner_loop(np.array([1.0]), np.array([0.0]), identity_actuator(BOX),
                             InnerLoopConfig(alpha=0.1, tol=1e-10))
        assert run.converged
        assert run.r_final[0] == pytest.approx(1.0 / 1.1, abs=1e-8)

    def test_already_optimal_converges_immediately(self):
        run = run_inner_loop(np.array([0.5]), np.array([0.5]), identity_actuator(BOX),
                             InnerLoopConfig(alpha=0.0, tol=1e-12))
        assert run.converged
        assert run.n_iters == 1
        assert np.array_equal(run.r_final, np.array([0.5]))

    def test_gain_error_rejected_by_feedback(self):
        act = identity_actuator(BOX, plant_gain=1.2)
        run = run_inner_loop(np.array([1.0]), np.array([0.0]), act,
                             InnerLoopConfig(alpha=0.0, tol=1e-9))
        assert run.converged
        assert abs(run.outputs[-1][0] - 1.0) < 1e-6
        assert run.r_final[0] == pytest.approx(1.0 / 1.2, abs=1e-6)

    def test_monotone_cost_decrease_small_step(self):
        act = identity_actuator(BOX)
        run = run_inner_loop(np.array([2.0]), np.array([-1.0]), act,
                             InnerLoopConfig(alpha=0.0, step_size=0.05, tol=1e-10, max_iters=300))
        assert np.all(np.diff(run.costs) <= 1e-15)

    def test_active_projection_lands_on_boundary(self):
        act = identity_actuator(ReferenceBox((0.0,), (1.0,)))
        run = run_inner_loop(np.array([2.0]), np.array([0.5]), act,
                             InnerLoopConfig(alpha=0.0, tol=1e-10))
        assert run.converged
        assert run.r_final[0] == pytest.approx(1.0, abs=1e-12)

    def test_iteration_cap_reported_not_raised(self):
        act = identity_actuator(BOX, plant_gain=1.2)
        run = run_inner_loop(np.array([1.0]), np.array([0.0]), act,
                             InnerLoopConfig(alpha=0.0, step_size=1e-4, tol=1e-12, max_iters=5))
        assert not run.converged
        assert run.n_iters == 5

    def test_history_shapes_consistent(self):
        run = run_inner_loop(np.array([1.0]), np.array([0.0]), identity_actuator(BOX),
                             InnerLoopConfig(alpha=0.1, tol=1e-10))
        assert run.references.shape == run.outputs.shape
        assert len(run.costs) == len(run.references)
        assert np.array_equal(run.references[-1], run.r_final)

    def test_r0_outside_box_rejected(self):
        with pytest.raises(ValueError):
            run_inner_loop(np.array([1.0]), np.array([20.0]), identity_actuator(BOX),
                           InnerLoopConfig(alpha=0.0, step_size=0.1))


class TestDefaultStepSize:
    def test_identity_actuator_curvature(self):
        # lambda_max(I + alpha*I) = 1 + alpha
        eps = default_step_size(identity_actuator(BOX), alpha=0.1)
        assert eps == pytest.approx(0.4 / 1.1, rel=1e-6)

    def test_linear_actuator_matches_eigendecomposition(self):
        rng = np.random.default_rng(3)
        M = rng.normal(size=(3, 3))
        act = linear_actuator(M, ReferenceBox((-1.0,) * 3, (1.0,) * 3))
        eps = default_step_size(act, alpha=0.2)
        lam = np.linalg.eigvalsh(M.T @ M + 0.2 * np.eye(3)).max()
        assert eps == pytest.approx(0.4 / lam, rel=1e-6)


class TestLegendre:
    def test_values_at_equator(self):
        assert legendre_eval(0.0, LegendreCoeffs(1.0, 1.0, 1.0)) == pytest.approx(0.5)

    def test_values_at_pole(self):
        assert legendre_eval(np.pi / 2, LegendreCoeffs(1.0, 1.0, 1.0)) == pytest.approx(3.0)

    def test_constant_field(self):
        psis = np.linspace(-np.pi / 2, np.pi / 2, 7)
        vals = legendre_eval(psis, LegendreCoeffs(2.5, 0.0, 0.0))
        assert np.allclose(vals, 2.5)

    def test_latitude_out_of_range_rejected(self):
        with pytest.raises(ValueError, match="latitude"):
            legendre_eval(2.0, LegendreCoeffs(1.0, 0.0, 0.0))

    def test_round_trip_random_coefficients(self):
        rng = np.random.default_rng(21)
        psis = np.array([-1.2, -0.5, 0.1, 0.8, 1.4])
        for _ in range(20):
            c = LegendreCoeffs(*rng.normal(size=3))
            samples = [(p, legendre_eval(p, c)) for p in psis]
            got = legendre_project(samples)
            assert np.allclose(got.as_array(), c.as_array(), atol=1e-9)

    def test_all_zero_samples(self):
        got = legendre_project([(-0.5, 0.0), (0.0, 0.0), (0.7, 0.0)])
        assert np.array_equal(got.as_array(), np.zeros(3))

    def test_out_of_span_field_matches_normal_equations_oracle(self):
        psis = np.linspace(-1.4, 1.4, 41)
        values = np.sin(psis) ** 3
        got = legendre_project(np.column_stack([psis, values]))
        # independent oracle: solve the normal equations directly
        s = np.sin(psis)
        X = np.column_stack([np.ones_like(s), s, 0.5 * (3 * s**2 - 1)])
        want = np.linalg.solve(X.T @ X, X.T @ values)
        assert np.allclose(got.as_array(), want, atol=1e-9)
        residual = values - X @ got.as_array()
        assert np.linalg.norm(residual) > 1e-3  # sin^3 is not in the span

    def test_rank_deficient_samples_rejected(self):
        with pytest.raises(ValueError, match="rank"):
            legendre_project([(0.2, 1.0), (0.2, 1.0), (0.2, 1.0)])
        with pytest.raises(ValueError):
            legendre_project([(0.2, 1.0), (0.3, 1.0)])


class TestSaiActuator:
    def setup_method(self):
        self.phi, self.xi = default_sai_matrices()
        self.box = ReferenceBox((0.0,) * 4, (10.0,) * 4)

    def test_zero_injection_zero_temperature_change(self):
        sai = make_sai_actuator(self.phi, self.xi, bounds=self.box)
        assert np.array_equal(sai.behavior(np.zeros(4)), np.zeros(3))
        assert np.array_equal(sai.plant_behavior(np.zeros(4)), np.zeros(3))

    def test_jacobian_is_composition(self):
        sai = make_sai_actuator(self.phi, self.xi, bounds=self.box)
        assert np.allclose(sai.model_jacobian(np.zeros(4)), self.xi @ self.phi)

    def test_matched_model_reaches_any_reachable_setpoint(self):
        sai = make_sai_actuator(self.phi, self.xi, bounds=self.box)
        u_star = sai.behavior(np.array([2.0, 1.0, 3.0, 0.5]))
        run = run_inner_loop(u_star, np.full(4, 5.0), sai,
                             InnerLoopConfig(alpha=0.0, tol=1e-11, max_iters=3000))
        assert run.converged
        assert np.max(np.abs(run.outputs[-1] - u_star)) < 1e-8

    def test_biased_plant_still_implements_setpoint(self):
        sai = make_sai_actuator(self.phi, self.xi, 1.15 * self.phi, 1.15 * self.xi, self.box)
        u_star = sai.plant_behavior(np.array([2.0, 1.0, 1.5, 2.5]))
        run = run_inner_loop(u_star, np.ones(4), sai,
                             InnerLoopConfig(alpha=0.0, tol=1e-10, max_iters=3000))
        assert run.converged
        assert np.max(np.abs(run.outputs[-1] - u_star)) < 1e-6

    def test_dimension_mismatch_rejected(self):
        with pytest.raises(ValueError, match="dimension"):
            make_sai_actuator(np.zeros((2, 4)), self.xi, bounds=self.box)
        with pytest.raises(ValueError, match="dimension"):
            make_sai_actuator(self.phi, np.zeros((3, 2)), bounds=self.box)
        with pytest.raises(ValueError, match="4-dimensional"):
            make_sai_actuator(self.phi, self.xi, bounds=ReferenceBox((0.0,), (1.0,)))

    def test_temperature_field_from_pattern_coefficients(self):
        # compose with legendre_eval: the realized temperature pattern
        sai = make_sai_actuator(self.phi, self.xi, bounds=self.box)
        u = sai.behavior(np.array([1.0, 1.0, 1.0, 1.0]))
        pattern = LegendreCoeffs(*u)
        psis = np.linspace(-np.pi / 2, np.pi / 2, 9)
        field = legendre_eval(psis, pattern)
        samples = np.column_stack([psis, field])
        assert np.allclose(legendre_project(samples).as_array(), u, atol=1e-9)


class TestConfigValidation:
    def test_negative_alpha_rejected(self):
        with pytest.raises(ValueError):
            InnerLoopConfig(alpha=-0.1)

    def test_non_positive_step_rejected(self):
        with pytest.raises(ValueError):
            InnerLoopConfig(step_size=0.0)

    def test_reference_box_validation(self):
        with pytest.raises(ValueError):
            ReferenceBox((1.0,), (0.0,))
