"""Perturbation sweeps measuring the Hölder-type stability of the recovered source."""
import logging
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional

import numpy as np
from scipy.integrate import trapezoid
from scipy.stats import linregress

from cbf.catalog import gradient_field, random_solenoidal, scalar_shape, vector_field
from cbf.errors import ConvergenceError
from cbf.forward import SamplingPolicy, solve_forward
from cbf.inverse import FixedPointConfig, InverseProblem, solve_inverse
from cbf.modulation import TimeProfile, sample_times
from cbf.spectral import laplacian, norm_h1_semi, norm_hminus1, norm_l2, norm_lp

logger = logging.getLogger(__name__)

TARGETS = ('u0', 'phi', 'grad_psi', 'g', 'g_t')
ERROR_COLUMNS = ('f_error', 'u_sup_error', 'grad_int_error', 'lr1_int_error', 'pressure_error')
DATA_TERMS = ('u0', 'g', 'g_t', 'grad_phi', 'psi_term')


@dataclass
class PerturbationSpec:
    """Direction and amplitude ladder for one data perturbation."""
    target: str
    shape: str = 'random'
    delta0: float = 1e-1
    rungs: int = 5
    ratio: float = 0.5
    seed: int = 20240501
    include_zero: bool = False

    def violations(self):
        problems = []
        if self.target not in TARGETS:
            problems.append(f"sweep target must be one of {TARGETS}, got '{self.target}'")
        if self.rungs < 5:
            problems.append(f"sweep needs at least 5 rungs, got {self.rungs}")
        if not 0 < self.ratio < 1:
            problems.append(f"sweep ratio must lie in (0, 1), got {self.ratio}")
        if not self.delta0 > 0:
            problems.append(f"sweep delta0 must be positive, got {self.delta0}")
        return problems

    @property
    def amplitudes(self):
        ladder = [self.delta0 * self.ratio ** j for j in range(self.rungs)]
        return ladder + [0.0] if self.include_zero else ladder


class Perturbation:
    """Fixed seeded direction for a target; builds perturbed problems per amplitude."""

    def __init__(self, base, spec):
        self.base = base
        self.spec = spec
        rng = np.random.default_rng(spec.seed)
        grid = base.grid
        if spec.target in ('u0', 'phi'):
            if spec.shape == 'random':
                self.direction = random_solenoidal(grid, rng)
            else:
                direction = vector_field(spec.shape, grid)
                self.direction = direction * (1.0 / norm_l2(direction))
        elif spec.target == 'grad_psi':
            self.direction = gradient_field(spec.shape, grid, rng)
        else:
            self.direction = scalar_shape(spec.shape, grid, rng)

    def apply(self, delta):
        base, target = self.base, self.spec.target
        u0, phi, grad_psi, g = base.u0, base.phi, base.grad_psi, base.g
        if delta == 0:
            return base
        if target == 'u0':
            u0 = u0 + self.direction * delta
        elif target == 'phi':
            phi = phi + self.direction * delta
        elif target == 'grad_psi':
            grad_psi = grad_psi + self.direction * delta
        elif target == 'g':
            g = g.with_term(self.direction * delta, TimeProfile('one'), name=f"{g.name}+dg")
        else:
            g = g.with_term(self.direction * delta, TimeProfile('sin', rate=1.0), name=f"{g.name}+dgt")
        if g.min_abs_at(base.T) <= 0:
            raise ValueError(f"perturbation of size {delta:g} makes g(., T) vanish somewhere")
        return InverseProblem(u0, phi, grad_psi, g, base.params, base.T)


@dataclass
class DataDifference:
    u0: float
    g: float
    g_t: float
    grad_phi: float
    psi_term: float

    def terms(self):
        return [getattr(self, name) for name in DATA_TERMS]

    def holder_bracket(self, r):
        return float(sum(value ** (2.0 / (r + 1)) for value in self.terms()))

    def linear_sum(self):
        return float(sum(self.terms()))


def data_difference(first, second):
    """Norms of the data differences entering the stability bounds."""
    times = sample_times(first.T)
    g_gap = max(float(np.max(np.abs(np.asarray(first.g.value(t)) - np.asarray(second.g.value(t)))))
                for t in times)
    gt_gap = max(float(np.max(np.abs(np.asarray(first.g.rate(t)) - np.asarray(second.g.rate(t)))))
                 for t in times)
    phi_gap = first.phi - second.phi
    mu = first.params.mu
    psi_term = (first.grad_psi - second.grad_psi) - laplacian(phi_gap) * mu
    return DataDifference(
        u0=norm_l2(first.u0 - second.u0),
        g=g_gap,
        g_t=gt_gap,
        grad_phi=norm_h1_semi(phi_gap),
        psi_term=norm_l2(psi_term),
    )


@dataclass
class SolvedData:
    """Inverse solution with the forward trajectory it drives."""
    f_hat: object
    trajectory: object
    converged: bool


def solve_data(problem, config, record):
    result = solve_inverse(problem, config)
    trajectory = solve_forward(problem.u0, result.f_hat, problem.g, problem.params, problem.T, config.nt,
                               record=record, with_pressure=True, with_final_rate=False)
    return SolvedData(result.f_hat, trajectory, result.converged)


def solution_errors(first, second, r):
    """Error columns between two solved data sets on the same time grid."""
    times = first.trajectory.times
    u_gaps = [a - b for a, b in zip(first.trajectory.snapshots, second.trajectory.snapshots)]
    p_gaps = [a - b for a, b in zip(first.trajectory.grad_p, second.trajectory.grad_p)]
    exponent = (r + 1) / r
    pressure = trapezoid([norm_hminus1(p) ** exponent for p in p_gaps], times) ** (1.0 / exponent)
    return {
        'f_error': norm_l2(first.f_hat - second.f_hat),
        'u_sup_error': max(norm_l2(u) for u in u_gaps),
        'grad_int_error': float(trapezoid([norm_h1_semi(u) ** 2 for u in u_gaps], times)),
        'lr1_int_error': float(trapezoid([norm_lp(u, r + 1) ** (r + 1) for u in u_gaps], times)),
        'pressure_error': float(pressure),
    }


def solution_scales(solved, r):
    """Base-solution magnitudes per error column, for the solver floor."""
    trajectory = solved.trajectory
    times = trajectory.times
    exponent = (r + 1) / r
    return {
        'f_error': norm_l2(solved.f_hat),
        'u_sup_error': max(norm_l2(u) for u in trajectory.snapshots),
        'grad_int_error': float(trapezoid([norm_h1_semi(u) ** 2 for u in trajectory.snapshots], times)),
        'lr1_int_error': float(trapezoid([norm_lp(u, r + 1) ** (r + 1) for u in trajectory.snapshots], times)),
        'pressure_error': float(trapezoid([norm_hminus1(p) ** exponent for p in trajectory.grad_p],
                                          times) ** (1.0 / exponent)),
    }


@dataclass
class StabilityRow:
    delta: float
    errors: Dict[str, float]
    data: DataDifference
    valid: bool = True
    note: str = ''


@dataclass
class HolderFit:
    exponent: Optional[float]
    r_squared: Optional[float]
    rows_used: int
    reason: str = ''

    @property
    def defined(self):
        return self.exponent is not None


@dataclass
class StabilityTable:
    target: str
    r: float
    rows: List[StabilityRow]
    floors: Dict[str, float] = field(default_factory=dict)
    fits: Dict[str, HolderFit] = field(default_factory=dict)

    def fit_all(self):
        self.fits = {column: fit_holder_exponent(self, column) for column in ERROR_COLUMNS}
        return self.fits


def fit_holder_exponent(table, column):
    """Least-squares slope of log(error) against log(delta) over usable rows."""
    floor = table.floors.get(column, 0.0)
    points = [(row.delta, row.errors[column]) for row in table.rows
              if row.valid and row.delta > 0 and row.errors.get(column, 0.0) > max(floor, 0.0)]
    if len(points) < 4:
        return HolderFit(None, None, len(points), reason=f"only {len(points)} usable rows, need 4")
    deltas, errors = (np.array(values) for values in zip(*points))
    fit = linregress(np.log(deltas), np.log(errors))
    return HolderFit(float(fit.slope), float(fit.rvalue ** 2), len(points))


@dataclass
class BoundCheck:
    constant: Optional[float]
    worst_ratio: Optional[float]
    passed: bool
    note: str = ''


def check_holder_bound(table, column, r, rel_slack=1e-6):
    """No valid row exceeds C delta^{2/(r+1)}, C calibrated on the largest delta."""
    power = 2.0 / (r + 1)
    rows = sorted((row for row in table.rows if row.valid and row.delta > 0),
                  key=lambda row: row.delta, reverse=True)
    if not rows:
        return BoundCheck(None, None, False, note='no valid rows')
    constant = rows[0].errors[column] / rows[0].delta ** power
    if constant == 0:
        worst = max(row.errors[column] for row in rows)
        return BoundCheck(0.0, None, worst == 0, note='largest-delta error is zero')
    ratios = [row.errors[column] / (constant * row.delta ** power) for row in rows]
    worst = max(ratios)
    return BoundCheck(float(constant), float(worst), worst <= 1.0 + rel_slack)


@dataclass
class FStabilityVerdict:
    ratios: List[float]
    max_ratio: Optional[float]
    variation: Optional[float]
    passed: bool
    note: str = ''


def check_f_stability_bound(table, params=None, max_variation=10.0):
    """|f1 - f2| over the linear data-difference sum, per row."""
    ratios = []
    for row in table.rows:
        total = row.data.linear_sum()
        if not row.valid or total <= 0:
            continue
        ratios.append(row.errors['f_error'] / total)
    if not ratios:
        return FStabilityVerdict([], None, None, False, note='no rows with a nonzero data difference')
    if not all(np.isfinite(ratios)):
        return FStabilityVerdict(ratios, None, None, False, note='non-finite ratio')
    positive = [value for value in ratios if value > 0]
    variation = max(positive) / min(positive) if positive else 1.0
    return FStabilityVerdict(ratios, max(ratios), variation, variation <= max_variation)


Evaluator = Callable[[float, InverseProblem], Dict[str, float]]


def run_stability_sweep(base, spec, config=None, threads=1, evaluator: Optional[Evaluator] = None,
                        record=None):
    """Perturb the data along the ladder, re-solve, and tabulate errors against the base solution."""
    problems = spec.violations()
    if problems:
        raise ValueError("; ".join(problems))
    config = config or FixedPointConfig()
    record = record or SamplingPolicy(every=max(1, config.nt // 64), geometric=0)
    r = base.params.r
    perturbation = Perturbation(base, spec)
    floors = {column: 0.0 for column in ERROR_COLUMNS}

    if evaluator is None:
        reference = solve_data(base, config, record)
        if not reference.converged:
            raise ConvergenceError("base inverse problem did not converge; the sweep needs a converged reference")
        scales = solution_scales(reference, r)
        floors = {column: 10.0 * config.rel_tol * scales[column] for column in ERROR_COLUMNS}

        def evaluator(delta, problem):
            solved = solve_data(problem, config, record)
            errors = solution_errors(reference, solved, r)
            errors['converged'] = solved.converged
            return errors

    def run_row(delta):
        problem = perturbation.apply(delta)
        errors = dict(evaluator(delta, problem))
        converged = bool(errors.pop('converged', True))
        row = StabilityRow(delta, errors, data_difference(base, problem), valid=converged)
        if not converged:
            row.note = 'inverse solve did not converge'
            logger.warning(f"Stability row delta={delta:g} excluded: {row.note}")
        logger.info(f"Stability row delta={delta:g}: f_error={errors.get('f_error', float('nan')):.3e}")
        return row

    deltas = spec.amplitudes
    with ThreadPoolExecutor(max_workers=max(1, threads)) as executor:
        rows = list(executor.map(run_row, deltas))
    rows.sort(key=lambda row: row.delta, reverse=True)

    table = StabilityTable(spec.target, r, rows, floors)
    table.fit_all()
    for column, fit in table.fits.items():
        if not fit.defined:
            logger.warning(f"Exponent for {column} undefined: {fit.reason}")
    return table
