"""Forward solver: analytic Taylor-Green decay, temporal order, pressure and guards."""
import numpy as np
import pytest

from cbf.catalog import random_solenoidal, vector_field
from cbf.errors import BlowUpError, RegimeError
from cbf.forward import (
    CbfParams, SamplingPolicy, convection, damping, damping_values, jacobian_values, pressure_gradient,
    rhs, solve_forward, stationary_residual, step,
)
from cbf.modulation import Modulation
from cbf.spectral import VectorField, inner, leray_project, make_grid, norm_h1_semi, norm_l2

TG_PARAMS = CbfParams(mu=0.5, alpha=0.5, beta=0.5, r=1.0, d=2)


def taylor_green_error(grid, dt, T=0.5):
    u0 = vector_field('tg1', grid)
    nt = int(round(T / dt))
    trajectory = solve_forward(u0, None, None, TG_PARAMS, T, nt, record=SamplingPolicy(final_only=True))
    decay = np.exp(-(2 * TG_PARAMS.mu + TG_PARAMS.alpha + TG_PARAMS.beta) * T)
    exact = u0 * decay
    return norm_l2(trajectory.final - exact) / norm_l2(exact)


class TestCbfParams:
    def test_regimes(self):
        assert CbfParams(1, 1, 1, 2.0, d=2).regime == 'd=2,r<=3'
        assert CbfParams(1, 1, 1, 3.0, d=3).regime == 'd=r=3'
        assert CbfParams(1, 1, 1, 5.0, d=3).regime == 'r>3'

    def test_three_dimensions_need_r_at_least_three(self):
        with pytest.raises(RegimeError, match="r >= 3"):
            CbfParams(1, 1, 1, 2.0, d=3)

    def test_collects_every_violation(self):
        with pytest.raises(RegimeError) as info:
            CbfParams(-1, 0, 1, 0.5)
        message = str(info.value)
        assert "mu must be positive" in message
        assert "alpha must be positive" in message
        assert "r must be at least 1" in message


class TestDamping:
    @pytest.mark.parametrize("r", [1.0, 2.0, 3.0, 5.0])
    def test_jacobian_matches_central_difference(self, r, rng):
        u = rng.standard_normal((2, 8, 8))
        w = rng.standard_normal((2, 8, 8))
        eps = 1e-6
        fd = (damping_values(u + eps * w, r) - damping_values(u - eps * w, r)) / (2 * eps)

        np.testing.assert_allclose(jacobian_values(u, w, r), fd, rtol=1e-6, atol=1e-7)

    def test_zero_field_has_zero_damping(self):
        u = np.zeros((2, 8, 8))

        assert np.all(damping_values(u, 1.5) == 0.0)
        assert np.all(jacobian_values(u, np.ones_like(u), 1.5) == 0.0)

    def test_linear_damping_is_identity(self, grid2d, rng):
        u = random_solenoidal(grid2d, rng)

        np.testing.assert_allclose(damping(u, 1.0).values, u.values, atol=1e-12)


class TestConvection:
    def test_skew_symmetric(self, grid2d, rng):
        u = random_solenoidal(grid2d, rng, kmax=3)

        assert abs(inner(convection(u), u)) <= 1e-11 * norm_l2(u) * norm_h1_semi(u)

    def test_taylor_green_convection_is_a_gradient(self, grid2d):
        u = vector_field('tg1', grid2d)

        assert norm_l2(leray_project(convection(u))) < 1e-12


class TestSolveForward:
    def test_taylor_green_decay(self, grid2d):
        assert taylor_green_error(grid2d, 1e-3) <= 1e-6

    def test_second_order_in_time(self, grid2d):
        errors = [taylor_green_error(grid2d, dt) for dt in (0.05, 0.025, 0.0125)]

        assert errors[0] / errors[1] >= 3.5
        assert errors[1] / errors[2] >= 3.5

    def test_zero_data_stays_zero(self, small_grid):
        params = CbfParams(1.0, 1.0, 1.0, 3.0)
        trajectory = solve_forward(VectorField.zeros(small_grid), None, None, params, 1.0, 10)

        assert norm_l2(trajectory.final) == 0.0

    def test_snapshots_stay_solenoidal(self, small_grid, rng):
        params = CbfParams(1.0, 1.0, 1.0, 3.0)
        u0 = random_solenoidal(small_grid, rng, kmax=3)
        f = random_solenoidal(small_grid, rng, kmax=3)
        trajectory = solve_forward(u0, f, Modulation.constant_value(1.0), params, 0.5, 50)

        for u in trajectory.snapshots:
            assert u.check_solenoidal(1e-10)

    def test_sampling_policy(self, small_grid):
        params = CbfParams(1.0, 1.0, 1.0, 3.0)
        u0 = vector_field('tg1', small_grid)
        trajectory = solve_forward(u0, None, None, params, 1.0, 64, record=SamplingPolicy(every=16, geometric=0))

        np.testing.assert_allclose(trajectory.times, [m / 8 for m in range(9)], atol=1e-15)
        assert trajectory.T == 1.0

    def test_landmark_snapping_warns(self, caplog):
        steps = SamplingPolicy(every=100, geometric=0).record_steps(100)

        assert "not a multiple of 8" in caplog.text
        assert 12 in steps and 100 in steps

    def test_final_rate_matches_rhs(self, small_grid, rng):
        params = CbfParams(1.0, 2.0, 1.0, 3.0)
        f = random_solenoidal(small_grid, rng, kmax=2)
        g = Modulation.constant_value(1.0)
        trajectory = solve_forward(vector_field('tg1', small_grid, 0.2), f, g, params, 0.25, 25)
        expected = rhs(trajectory.final, f, g, 0.25, params)

        np.testing.assert_allclose(trajectory.final_rate.values, expected.values, atol=1e-12)

    def test_blow_up_guard(self, small_grid):
        params = CbfParams(1.0, 1.0, 1.0, 5.0)
        u0 = vector_field('tg1', small_grid, 100.0)

        with pytest.raises(BlowUpError) as info:
            solve_forward(u0, None, None, params, 1.0, 2)
        assert info.value.sup_norm > 1e6
        assert info.value.step is not None

    def test_rejects_bad_step_count(self, small_grid):
        with pytest.raises(ValueError, match="step count"):
            solve_forward(VectorField.zeros(small_grid), None, None, TG_PARAMS, 1.0, 0)

    def test_single_step_agrees_with_solver(self, small_grid):
        u0 = vector_field('tg1', small_grid)
        once = step(u0, 0.0, 0.01, None, None, TG_PARAMS)
        trajectory = solve_forward(u0, None, None, TG_PARAMS, 0.01, 1, record=SamplingPolicy(final_only=True))

        np.testing.assert_allclose(once.values, trajectory.final.values, atol=1e-15)


class TestPressureGradient:
    def test_taylor_green_pressure(self, grid2d):
        u = vector_field('tg1', grid2d)
        x, y = grid2d.coordinates()
        grad_p = pressure_gradient(u, None, 1.0, TG_PARAMS)

        np.testing.assert_allclose(grad_p.values[0], -0.5 * np.sin(2 * x), atol=1e-12)
        np.testing.assert_allclose(grad_p.values[1], -0.5 * np.sin(2 * y), atol=1e-12)

    def test_pressure_of_pure_gradient_forcing(self, grid2d):
        x, _ = grid2d.coordinates()
        f = VectorField(grid2d, np.stack([np.sin(x), np.zeros_like(x)]))

        grad_p = pressure_gradient(VectorField.zeros(grid2d), f, 2.0, TG_PARAMS)

        np.testing.assert_allclose(grad_p.values, 2.0 * f.values, atol=1e-12)


class TestStationaryResidual:
    def test_zero_data(self, small_grid):
        residual = stationary_residual(VectorField.zeros(small_grid), VectorField.zeros(small_grid), TG_PARAMS)

        assert norm_l2(residual) == 0.0

    def test_linear_part(self, grid2d):
        phi = vector_field('tg1', grid2d)
        residual = stationary_residual(phi, VectorField.zeros(grid2d), TG_PARAMS)
        # conv(phi) is a gradient; the rest is (2 mu + alpha + beta) phi
        solenoidal = leray_project(residual)

        np.testing.assert_allclose(solenoidal.values, 2.0 * phi.values, atol=1e-12)


def test_three_dimensional_taylor_green_decays():
    grid = make_grid(3, 16, 2 * np.pi)
    params = CbfParams(mu=0.5, alpha=0.5, beta=0.5, r=3.0, d=3)
    u0 = vector_field('tg1', grid, 0.1)
    trajectory = solve_forward(u0, None, None, params, 0.5, 100)

    assert norm_l2(trajectory.final) < norm_l2(u0)
    assert trajectory.final.check_solenoidal(1e-10)
