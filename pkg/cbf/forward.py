"""Forward CBF solver: damping, convection, pressure and IMEX time stepping."""
import logging
from dataclasses import dataclass, field
from math import pi
from typing import List, Optional

import numpy as np

from cbf.errors import BlowUpError, RegimeError
from cbf.spectral import (
    SPECTRAL, VectorField, forward_transform, inverse_transform, leray_coefficients,
)

logger = logging.getLogger(__name__)

BLOW_UP_LIMIT = 1e6


@dataclass(frozen=True)
class CbfParams:
    """Coefficients of the convective Brinkman-Forchheimer system."""
    mu: float
    alpha: float
    beta: float
    r: float
    d: int = 2
    L: float = 2 * pi

    def __post_init__(self):
        problems = self.violations()
        if problems:
            raise RegimeError("; ".join(problems))

    def violations(self):
        problems = []
        for name in ('mu', 'alpha', 'beta'):
            if not getattr(self, name) > 0:
                problems.append(f"{name} must be positive, got {getattr(self, name)}")
        if not self.r >= 1:
            problems.append(f"r must be at least 1, got {self.r}")
        if self.d not in (2, 3):
            problems.append(f"d must be 2 or 3, got {self.d}")
        elif self.d == 3 and self.r < 3:
            problems.append(f"d = 3 needs r >= 3, got r = {self.r}")
        if not self.L > 0:
            problems.append(f"L must be positive, got {self.L}")
        return problems

    @property
    def regime(self):
        """Which well-posedness regime the parameters sit in."""
        if self.r > 3:
            return 'r>3'
        if self.d == 3:
            return 'd=r=3'
        return 'd=2,r<=3'


def _check_exponent(r):
    if r < 1:
        raise ValueError(f"damping exponent must be at least 1, got {r}")


def damping_values(u, r):
    """Pointwise |u|^{r-1} u on a (d, ...) array; zero where u vanishes."""
    _check_exponent(r)
    # 0 ** 0 == 1 keeps r = 1 exact
    factor = np.sum(u ** 2, axis=0) ** ((r - 1) / 2.0)
    return factor * u


def jacobian_values(u, w, r):
    """Pointwise Gateaux derivative C'(u) w on (d, ...) arrays."""
    _check_exponent(r)
    if r == 1:
        return np.array(w, dtype=float, copy=True)
    square = np.sum(u ** 2, axis=0)
    dot = np.sum(u * w, axis=0)
    if r >= 3:
        return square ** ((r - 1) / 2.0) * w + (r - 1) * square ** ((r - 3) / 2.0) * dot * u
    nonzero = square > 0
    safe = np.where(nonzero, square, 1.0)
    result = safe ** ((r - 1) / 2.0) * w + (r - 1) * safe ** ((r - 3) / 2.0) * dot * u
    return np.where(nonzero, result, 0.0)


def damping(u, r):
    """C(u) = |u|^{r-1} u, dealiased."""
    coefficients = forward_transform(u.grid, damping_values(u.values, r)) * u.grid.dealias_mask
    return VectorField(u.grid, coefficients, SPECTRAL)


def damping_jacobian_apply(u, w, r):
    return VectorField(u.grid, jacobian_values(u.values, w.values, r))


def _convection_coefficients(grid, u_hat, u):
    """Skew-symmetric form 1/2[(u.grad)u + div(u x u)], dealiased."""
    d = grid.d
    gradients = inverse_transform(grid, np.stack([
        1j * grid.k_deriv[j] * u_hat[i] for i in range(d) for j in range(d)
    ])).reshape((d, d) + grid.shape)
    advective = np.einsum('j...,ij...->i...', u, gradients)
    products = forward_transform(grid, u[:, None] * u[None, :])
    flux = np.stack([
        sum(1j * grid.k_deriv[j] * products[i, j] for j in range(d)) for i in range(d)
    ])
    return 0.5 * (forward_transform(grid, advective) + flux) * grid.dealias_mask


def convection(u):
    coefficients = _convection_coefficients(u.grid, u.coefficients, u.values)
    return VectorField(u.grid, coefficients, SPECTRAL)


def _modulation_values(g, t):
    if g is None:
        return 1.0
    if hasattr(g, 'value'):
        return g.value(t)
    if hasattr(g, 'values'):
        return g.values
    return g


class CbfSolver:
    """Pseudo-spectral integrator for u_t = P[f g - (u.grad)u - beta C(u)] + mu Lap u - alpha u."""

    def __init__(self, grid, params):
        if grid.d != params.d:
            raise RegimeError(f"grid dimension {grid.d} does not match params d = {params.d}")
        self.grid = grid
        self.params = params
        self.linear = -(params.mu * grid.k2 + params.alpha)

    def nonlinear(self, u_hat, t, f_values, g, check=None):
        """Projected explicit part P[f g - conv - beta C] in spectral form."""
        grid = self.grid
        u = inverse_transform(grid, u_hat)
        if check is not None:
            self._guard(u, *check)
        explicit = -_convection_coefficients(grid, u_hat, u)
        explicit -= self.params.beta * forward_transform(grid, damping_values(u, self.params.r)) * grid.dealias_mask
        if f_values is not None:
            explicit += forward_transform(grid, f_values * _modulation_values(g, t))
        return leray_coefficients(grid, explicit)

    def rhs_coefficients(self, u_hat, t, f_values, g):
        return self.nonlinear(u_hat, t, f_values, g) + self.linear * u_hat

    def pressure_coefficients(self, u_hat, f_values, g_values):
        """Spectral grad p = Q[f g - conv - beta C]; the mean of p is zero."""
        grid = self.grid
        u = inverse_transform(grid, u_hat)
        source = -_convection_coefficients(grid, u_hat, u)
        source -= self.params.beta * forward_transform(grid, damping_values(u, self.params.r)) * grid.dealias_mask
        if f_values is not None:
            source += forward_transform(grid, f_values * g_values)
        return source - leray_coefficients(grid, source)

    def step_coefficients(self, u_hat, t, dt, f_values, g, index=None):
        """Integrating-factor Heun step; returns projected, dealiased coefficients."""
        decay = np.exp(self.linear * dt)
        check = None if index is None else (index, t)
        start = self.nonlinear(u_hat, t, f_values, g, check=check)
        predicted = decay * (u_hat + dt * start)
        corrected = self.nonlinear(predicted, t + dt, f_values, g)
        u_next = decay * u_hat + 0.5 * dt * (decay * start + corrected)
        return leray_coefficients(self.grid, u_next) * self.grid.dealias_mask

    def check_state(self, u_hat, index, t):
        self._guard(inverse_transform(self.grid, u_hat), index, t)

    def _guard(self, u, index, t):
        sup = float(np.max(np.sqrt(np.sum(u ** 2, axis=0))))
        if not np.isfinite(sup) or sup > BLOW_UP_LIMIT:
            raise BlowUpError(
                f"forward solution blew up at step {index} (t={t:.6g}): sup|u| = {sup:.3e}",
                step=index, time=t, sup_norm=sup,
            )


def _forcing_values(f):
    return None if f is None else f.values


def rhs(u, f, g, t, params):
    """u_t evaluated from the equation itself; the result is solenoidal."""
    solver = CbfSolver(u.grid, params)
    coefficients = solver.rhs_coefficients(u.coefficients, t, _forcing_values(f), g)
    return VectorField(u.grid, coefficients, SPECTRAL, solenoidal=True)


def pressure_gradient(u, f, g_val, params, t=0.0):
    """grad p solving -Lap p = div[(u.grad)u + beta C(u) - f g] with zero-mean p."""
    solver = CbfSolver(u.grid, params)
    coefficients = solver.pressure_coefficients(
        u.coefficients, _forcing_values(f), _modulation_values(g_val, t))
    return VectorField(u.grid, coefficients, SPECTRAL)


def step(u, t, dt, f, g, params):
    if not dt > 0:
        raise ValueError(f"time step must be positive, got {dt}")
    solver = CbfSolver(u.grid, params)
    coefficients = solver.step_coefficients(u.coefficients, t, dt, _forcing_values(f), g, index=0)
    solver.check_state(coefficients, 1, t + dt)
    return VectorField(u.grid, coefficients, SPECTRAL, solenoidal=True)


@dataclass
class SamplingPolicy:
    """Which step indices get recorded.

    Uniform every `every` steps (default nt // 256), a geometric ladder of
    `geometric` indices below nt/8, and the landmark steps m nt / 8.
    """
    every: Optional[int] = None
    geometric: int = 12
    landmarks: bool = True
    final_only: bool = False
    steps: Optional[List[int]] = None

    def record_steps(self, nt):
        if self.final_only:
            return [nt]
        if self.steps is not None:
            chosen = {int(s) for s in self.steps if 0 <= s <= nt}
            chosen.update((0, nt))
            return sorted(chosen)

        chosen = set(range(0, nt + 1, self.every or max(1, nt // 256)))
        chosen.update((0, nt))
        if self.geometric and nt >= 8:
            ladder = np.geomspace(1, max(1.0, nt / 8.0), self.geometric)
            chosen.update(int(round(s)) for s in ladder)
        if self.landmarks:
            if nt % 8 != 0:
                logger.warning(f"nt={nt} is not a multiple of 8; landmark times snapped to the step grid")
            chosen.update(int(round(m * nt / 8.0)) for m in range(1, 9))
        return sorted(chosen)


def landmark_times(T):
    return [m * T / 8.0 for m in range(9)]


@dataclass
class Trajectory:
    """Recorded forward solution; times strictly increasing from 0 to T."""
    times: np.ndarray
    snapshots: List[VectorField]
    grad_p: Optional[List[VectorField]] = None
    u_t: Optional[List[VectorField]] = None
    final_rate: Optional[VectorField] = None
    nt: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def grid(self):
        return self.snapshots[0].grid

    @property
    def final(self):
        return self.snapshots[-1]

    @property
    def T(self):
        return float(self.times[-1])

    def __len__(self):
        return len(self.snapshots)


def solve_forward(u0, f, g, params, T, nt, record=None, with_pressure=False,
                  with_rates=False, with_final_rate=True):
    """Integrate from u0 to time T in nt equal steps, recording per `record`."""
    if nt < 1:
        raise ValueError(f"step count must be positive, got {nt}")
    if not T > 0:
        raise ValueError(f"final time must be positive, got {T}")

    grid = u0.grid
    solver = CbfSolver(grid, params)
    record = record or SamplingPolicy()
    wanted = set(record.record_steps(nt))
    dt = T / nt
    f_values = _forcing_values(f)

    u_hat = leray_coefficients(grid, u0.coefficients)
    times, snapshots, pressures, rates = [], [], [], []

    def keep(index, coefficients):
        t = T if index == nt else index * dt
        times.append(t)
        snapshots.append(VectorField(grid, coefficients, SPECTRAL, solenoidal=True))
        if with_pressure:
            grad_p = solver.pressure_coefficients(coefficients, f_values, _modulation_values(g, t))
            pressures.append(VectorField(grid, grad_p, SPECTRAL))
        if with_rates:
            rates.append(VectorField(grid, solver.rhs_coefficients(coefficients, t, f_values, g),
                                     SPECTRAL, solenoidal=True))

    if 0 in wanted:
        keep(0, u_hat)
    for index in range(nt):
        u_hat = solver.step_coefficients(u_hat, index * dt, dt, f_values, g, index=index)
        if index + 1 in wanted:
            keep(index + 1, u_hat)
    solver.check_state(u_hat, nt, T)

    final_rate = None
    if with_final_rate:
        final_rate = VectorField(grid, solver.rhs_coefficients(u_hat, T, f_values, g),
                                 SPECTRAL, solenoidal=True)

    logger.debug(f"Forward solve finished: nt={nt}, T={T}, recorded {len(snapshots)} snapshots")
    return Trajectory(
        times=np.asarray(times),
        snapshots=snapshots,
        grad_p=pressures if with_pressure else None,
        u_t=rates if with_rates else None,
        final_rate=final_rate,
        nt=nt,
    )


def stationary_residual(phi, grad_psi, params):
    """(phi.grad)phi + grad psi - mu Lap phi + alpha phi + beta C(phi), unprojected."""
    grid = phi.grid
    phi_hat = phi.coefficients
    coefficients = _convection_coefficients(grid, phi_hat, phi.values)
    coefficients = coefficients + grad_psi.coefficients
    coefficients = coefficients + (params.mu * grid.k2 + params.alpha) * phi_hat
    coefficients = coefficients + params.beta * forward_transform(
        grid, damping_values(phi.values, params.r)) * grid.dealias_mask
    return VectorField(grid, coefficients, SPECTRAL)
