import numpy as np
import pytest

from cbf.errors import ConvergenceError
from cbf.inverse import UNBOUNDED, FixedPointConfig
from cbf.spectral import norm_l2
from cbf.stability import (
    ERROR_COLUMNS, DataDifference, Perturbation, PerturbationSpec, StabilityRow, StabilityTable,
    check_f_stability_bound, check_holder_bound, data_difference, fit_holder_exponent, run_stability_sweep,
)


def synthetic_table(errors_of, r=3.0, rungs=6, data_of=None):
    deltas = [0.1 * 0.5 ** j for j in range(rungs)]
    rows = []
    for delta in deltas:
        data = data_of(delta) if data_of else DataDifference(delta, 0.0, 0.0, 0.0, 0.0)
        rows.append(StabilityRow(delta, {column: errors_of(delta) for column in ERROR_COLUMNS}, data))
    return StabilityTable('phi', r, rows)


class TestPerturbationSpec:
    def test_ladder(self):
        spec = PerturbationSpec('phi', delta0=0.2, rungs=5, ratio=0.5)

        assert spec.amplitudes == pytest.approx([0.2, 0.1, 0.05, 0.025, 0.0125])
        assert PerturbationSpec('phi', include_zero=True).amplitudes[-1] == 0.0

    def test_violations(self):
        problems = PerturbationSpec('f', rungs=3, ratio=1.5, delta0=0.0).violations()

        assert len(problems) == 4

    def test_sweep_rejects_bad_spec(self, small_problem):
        problem, _, _ = small_problem

        with pytest.raises(ValueError, match="at least 5 rungs"):
            run_stability_sweep(problem, PerturbationSpec('phi', rungs=2))


class TestPerturbation:
    def test_phi_direction_has_unit_norm(self, small_problem):
        problem, _, _ = small_problem
        perturbation = Perturbation(problem, PerturbationSpec('phi'))

        perturbed = perturbation.apply(0.01)

        assert norm_l2(perturbation.direction) == pytest.approx(1.0)
        assert norm_l2(perturbed.phi - problem.phi) == pytest.approx(0.01)
        assert perturbed.u0 is problem.u0

    def test_zero_amplitude_returns_base(self, small_problem):
        problem, _, _ = small_problem

        assert Perturbation(problem, PerturbationSpec('u0')).apply(0.0) is problem

    def test_grad_psi_stays_a_gradient(self, small_problem):
        problem, _, _ = small_problem

        perturbed = Perturbation(problem, PerturbationSpec('grad_psi', shape='cos')).apply(0.1)

        assert not perturbed.violations()

    def test_vanishing_modulation_is_rejected(self, small_problem):
        problem, _, _ = small_problem
        perturbation = Perturbation(problem, PerturbationSpec('g', shape='one'))

        with pytest.raises(ValueError, match="vanish"):
            perturbation.apply(-1.0)

    def test_data_difference(self, small_problem):
        problem, _, _ = small_problem
        perturbed = Perturbation(problem, PerturbationSpec('u0')).apply(0.05)

        difference = data_difference(problem, perturbed)

        assert difference.u0 == pytest.approx(0.05)
        assert difference.g == 0.0
        assert difference.grad_phi == 0.0
        assert difference.linear_sum() == pytest.approx(0.05)
        assert difference.holder_bracket(3.0) == pytest.approx(0.05 ** 0.5)


class TestHolderFit:
    @pytest.mark.parametrize("exponent", [1.0, 0.5])
    def test_recovers_power_law(self, exponent):
        table = synthetic_table(lambda delta: 3.0 * delta ** exponent)

        fit = fit_holder_exponent(table, 'f_error')

        assert fit.exponent == pytest.approx(exponent, abs=0.01)
        assert fit.r_squared == pytest.approx(1.0)
        assert fit.rows_used == 6

    @pytest.mark.parametrize("scale", [1e-6, 1.0, 1e6])
    def test_exponent_ignores_error_scale(self, scale):
        reference = fit_holder_exponent(synthetic_table(lambda delta: delta ** 0.5), 'f_error')

        fit = fit_holder_exponent(synthetic_table(lambda delta: scale * delta ** 0.5), 'f_error')

        assert fit.exponent == pytest.approx(reference.exponent, abs=1e-10)
        assert fit.r_squared == pytest.approx(reference.r_squared, abs=1e-10)

    def test_exponent_under_multiplicative_noise(self, rng):
        table = synthetic_table(lambda delta: 2.0 * delta ** 0.5 * (1.0 + rng.uniform(-0.01, 0.01)))

        fit = fit_holder_exponent(table, 'f_error')

        assert fit.exponent == pytest.approx(0.5, abs=0.05)
        assert fit.r_squared > 0.99

    def test_rows_below_floor_are_dropped(self):
        table = synthetic_table(lambda delta: delta)
        table.floors['f_error'] = 0.02

        fit = fit_holder_exponent(table, 'f_error')

        assert not fit.defined
        assert "usable rows" in fit.reason

    def test_invalid_rows_are_skipped(self):
        table = synthetic_table(lambda delta: delta)
        table.rows[0].valid = False
        table.rows[0].errors['f_error'] = 1e3

        assert fit_holder_exponent(table, 'f_error').exponent == pytest.approx(1.0)


class TestBounds:
    def test_holder_bound_holds_for_faster_decay(self):
        table = synthetic_table(lambda delta: delta)

        bound = check_holder_bound(table, 'f_error', r=3.0)

        assert bound.passed
        assert bound.worst_ratio == pytest.approx(1.0)

    def test_holder_bound_fails_for_slower_decay(self):
        table = synthetic_table(lambda delta: delta ** 0.25)

        bound = check_holder_bound(table, 'f_error', r=3.0)

        assert not bound.passed
        assert bound.worst_ratio > 1.0

    def test_holder_bound_without_rows(self):
        table = StabilityTable('phi', 3.0, [])

        assert not check_holder_bound(table, 'f_error', 3.0).passed

    def test_f_stability_linear(self):
        table = synthetic_table(lambda delta: 2.0 * delta)

        verdict = check_f_stability_bound(table)

        assert verdict.passed
        assert verdict.max_ratio == pytest.approx(2.0)
        assert verdict.variation == pytest.approx(1.0)

    def test_f_stability_fails_when_ratio_drifts(self):
        table = synthetic_table(lambda delta: 1.0, rungs=8)

        verdict = check_f_stability_bound(table)

        assert not verdict.passed
        assert verdict.variation > 10.0

    def test_f_stability_without_data_difference(self):
        table = synthetic_table(lambda delta: delta,
                                data_of=lambda delta: DataDifference(0.0, 0.0, 0.0, 0.0, 0.0))

        assert not check_f_stability_bound(table).passed


class TestRunStabilitySweep:
    def test_injected_evaluator(self, small_problem):
        problem, _, _ = small_problem
        seen = []

        def evaluator(delta, perturbed):
            seen.append(delta)
            errors = {column: delta ** 0.5 for column in ERROR_COLUMNS}
            errors['f_error'] = 4.0 * delta
            return errors

        spec = PerturbationSpec('u0', delta0=0.1, rungs=6)
        table = run_stability_sweep(problem, spec, threads=2, evaluator=evaluator)

        assert sorted(seen, reverse=True) == pytest.approx(spec.amplitudes)
        assert [row.delta for row in table.rows] == sorted(spec.amplitudes, reverse=True)
        assert table.fits['f_error'].exponent == pytest.approx(1.0, abs=0.01)
        assert table.fits['u_sup_error'].exponent == pytest.approx(0.5, abs=0.01)
        assert all(row.data.u0 == pytest.approx(row.delta) for row in table.rows)

    def test_unconverged_rows_are_excluded(self, small_problem):
        problem, _, _ = small_problem

        def evaluator(delta, perturbed):
            errors = {column: delta for column in ERROR_COLUMNS}
            errors['converged'] = delta > 0.01
            return errors

        table = run_stability_sweep(problem, PerturbationSpec('u0', delta0=0.1, rungs=6), evaluator=evaluator)

        invalid = [row for row in table.rows if not row.valid]
        assert [row.delta for row in invalid] == pytest.approx([0.1 * 0.5 ** 4, 0.1 * 0.5 ** 5])
        assert "did not converge" in invalid[0].note
        assert table.fits['f_error'].rows_used == 4

    def test_unconverged_base_raises(self, small_problem):
        problem, _, nt = small_problem
        config = FixedPointConfig(nt=nt, max_iters=1, ball_radius_mode=UNBOUNDED)

        with pytest.raises(ConvergenceError):
            run_stability_sweep(problem, PerturbationSpec('phi'), config)


@pytest.mark.slow
def test_phi_sweep_recovers_linear_stability(small_problem):
    problem, _, nt = small_problem
    config = FixedPointConfig(nt=nt, ball_radius_mode=UNBOUNDED, rel_tol=1e-10)

    table = run_stability_sweep(problem, PerturbationSpec('phi', delta0=1e-2, rungs=5), config, threads=2)

    assert all(row.valid for row in table.rows)
    f_errors = [row.errors['f_error'] for row in table.rows]
    assert all(np.diff(f_errors) < 0)
    assert table.fits['f_error'].exponent >= 2.0 / (problem.params.r + 1) - 0.05
    assert check_holder_bound(table, 'f_error', problem.params.r).passed
    assert check_f_stability_bound(table, problem.params).passed
