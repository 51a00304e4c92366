"""Fixed-point recovery of the spatial forcing f from final-time data."""
import logging
import time
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np

from cbf.admissibility import check_admissibility
from cbf.errors import BlowUpError
from cbf.forward import SamplingPolicy, pressure_gradient, solve_forward, stationary_residual
from cbf.spectral import VectorField, gradient_part, leray_project, norm_l2

logger = logging.getLogger(__name__)

PAPER_M = 'paper_M'
USER = 'user'
UNBOUNDED = 'unbounded'

G_FLOOR = 1e-12


@dataclass
class InverseProblem:
    """Data (u0, phi, grad psi, g) of the final overdetermination problem."""
    u0: VectorField
    phi: VectorField
    grad_psi: VectorField
    g: object
    params: object
    T: float

    @property
    def grid(self):
        return self.u0.grid

    def violations(self, tol=1e-9):
        problems = []
        for name in ('u0', 'phi'):
            v = getattr(self, name)
            if not v.check_solenoidal(tol):
                problems.append(f"{name} is not solenoidal")
        projected = norm_l2(leray_project(self.grad_psi))
        if projected > tol * max(norm_l2(self.grad_psi), 1.0):
            problems.append(f"grad_psi is not a pure gradient (solenoidal part {projected:.3e})")
        g_T = self.g.min_abs_at(self.T)
        if g_T <= G_FLOOR:
            problems.append(f"min |g(x, T)| = {g_T:.3e} is not positive")
        return problems

    def with_u0(self, u0):
        return InverseProblem(u0, self.phi, self.grad_psi, self.g, self.params, self.T)


@dataclass
class FixedPointConfig:
    max_iters: int = 200
    rel_tol: float = 1e-8
    relaxation: float = 1.0
    ball_radius_mode: str = PAPER_M
    ball_radius: Optional[float] = None
    nt: int = 1000
    project_output: bool = False
    initial: Optional[VectorField] = None

    def violations(self):
        problems = []
        if self.max_iters < 1:
            problems.append(f"max_iters must be at least 1, got {self.max_iters}")
        if not 0 < self.relaxation <= 1:
            problems.append(f"relaxation must lie in (0, 1], got {self.relaxation}")
        if not self.rel_tol > 0:
            problems.append(f"rel_tol must be positive, got {self.rel_tol}")
        if self.ball_radius_mode not in (PAPER_M, USER, UNBOUNDED):
            problems.append(f"unknown ball_radius_mode '{self.ball_radius_mode}'")
        if self.ball_radius_mode == USER and not (self.ball_radius or 0) > 0:
            problems.append("ball_radius_mode 'user' needs a positive ball_radius")
        if self.nt < 1:
            problems.append(f"nt must be at least 1, got {self.nt}")
        return problems


def final_solve(problem, f, nt, with_final_rate=True):
    """Forward solution driven by f, recording only u(., T)."""
    return solve_forward(problem.u0, f, problem.g, problem.params, problem.T, nt,
                         record=SamplingPolicy(final_only=True), with_final_rate=with_final_rate)


def operator_A(f, problem, nt):
    """A f = u_t(., T) from the forward solution driven by f."""
    return final_solve(problem, f, nt).final_rate


class FixedPointOperator:
    """B f = [A f + (phi.grad)phi + grad psi - mu Lap phi + alpha phi + beta C(phi)] / g(., T)."""

    def __init__(self, problem, nt, project_output=False):
        self.problem = problem
        self.nt = nt
        self.project_output = project_output
        g_T = np.broadcast_to(problem.g.value(problem.T), problem.grid.shape)
        if np.min(np.abs(g_T)) < G_FLOOR:
            raise ValueError(f"g(., T) has grid values below {G_FLOOR:g} in modulus")
        self.g_T = g_T
        self.data_term = stationary_residual(problem.phi, problem.grad_psi, problem.params).values
        self.last_state = None

    def __call__(self, f):
        trajectory = final_solve(self.problem, f, self.nt)
        self.last_state = trajectory.final
        image = VectorField(self.problem.grid, (trajectory.final_rate.values + self.data_term) / self.g_T)
        return leray_project(image) if self.project_output else image


def operator_B(f, problem, nt, project_output=False):
    return FixedPointOperator(problem, nt, project_output)(f)


@dataclass
class IterationRecord:
    iteration: int
    residual: float
    f_norm: float
    scaled: bool
    wall_time: float
    change: float


@dataclass
class InverseResult:
    f_hat: VectorField
    converged: bool
    iterations: int
    history: List[IterationRecord]
    admissibility: object
    radius: Optional[float]
    scaling_triggered: bool = False
    message: str = ''
    notes: list = field(default_factory=list)

    @property
    def residual_history(self):
        return [record.residual for record in self.history]


def _resolve_radius(config, report):
    if config.ball_radius_mode == UNBOUNDED:
        return None
    if config.ball_radius_mode == USER:
        return float(config.ball_radius)
    if report.radius.defined:
        return report.radius.value
    logger.warning(f"Ball radius undefined ({report.radius.reason}); iterating unbounded")
    return None


def solve_inverse(problem, config=None):
    """Relaxed Picard iteration f <- (1 - theta) f + theta B f inside the ball of radius M."""
    config = config or FixedPointConfig()
    problems = config.violations() + problem.violations()
    if problems:
        raise ValueError("; ".join(problems))

    report = check_admissibility(problem)
    if not report.admissible:
        logger.warning(f"Inverse problem is not admissible ({report.condition} or g_T); solving anyway")
    radius = _resolve_radius(config, report)
    operator = FixedPointOperator(problem, config.nt, config.project_output)
    theta = config.relaxation

    f = config.initial if config.initial is not None else VectorField.zeros(problem.grid)
    history = []
    best, best_residual = f, np.inf
    scaling_triggered = False
    converged = False

    for k in range(config.max_iters):
        started = time.perf_counter()
        try:
            image = operator(f)
        except BlowUpError as e:
            raise BlowUpError(f"forward solve failed at iterate {k}: {e}",
                              step=e.step, time=e.time, sup_norm=e.sup_norm) from e
        wall = time.perf_counter() - started

        residual = norm_l2(image - f)
        if residual < best_residual:
            best, best_residual = f, residual

        updated = f * (1.0 - theta) + image * theta if theta != 1.0 else image
        scaled = False
        size = norm_l2(updated)
        if radius is not None and size > radius:
            updated = updated * (radius / size)
            scaled = scaling_triggered = True
            logger.info(f"Iterate {k + 1} scaled back onto the ball of radius {radius:.6g}")

        change = norm_l2(updated - f) / max(norm_l2(f), np.finfo(float).tiny)
        history.append(IterationRecord(k, residual, norm_l2(f), scaled, wall, change))
        logger.info(f"Iteration {k}: residual={residual:.3e}, |f|={norm_l2(f):.6g}, change={change:.3e}")

        f = updated
        if change <= config.rel_tol:
            converged = True
            break

    if converged:
        f_hat, message = f, f"converged after {len(history)} iterations"
    else:
        f_hat, message = best, f"not converged after {config.max_iters} iterations"
        logger.warning(f"Fixed-point iteration {message}; returning the best iterate")

    return InverseResult(
        f_hat=f_hat,
        converged=converged,
        iterations=len(history),
        history=history,
        admissibility=report,
        radius=radius,
        scaling_triggered=scaling_triggered,
        message=message,
    )


def recover_pressure(problem, f_hat, nt, final=None):
    """grad p(., T) from the forward state driven by f_hat; `final` is that state when already solved for."""
    if final is None:
        final = final_solve(problem, f_hat, nt, with_final_rate=False).final
    grad_p = pressure_gradient(final, f_hat, problem.g.value(problem.T), problem.params)
    logger.info(f"Pressure data mismatch |grad p(T) - grad psi| / |grad psi| = "
                f"{pressure_mismatch(problem, grad_p):.3e}")
    return grad_p


def pressure_mismatch(problem, grad_p):
    """Relative mismatch |grad p - grad psi| / |grad psi|."""
    scale = norm_l2(problem.grad_psi)
    mismatch = norm_l2(grad_p - problem.grad_psi)
    return mismatch / scale if scale > 0 else mismatch


def gradient_fraction(f):
    """|(I - P) f| / |f|; zero for the zero field."""
    size = norm_l2(f)
    return norm_l2(gradient_part(f)) / size if size > 0 else 0.0
