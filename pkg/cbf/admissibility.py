"""Admissibility of inverse problems: K constants, regime conditions and the ball radius M."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from cbf.errors import RegimeError
from cbf.forward import stationary_residual
from cbf.modulation import sample_times
from cbf.spectral import norm_l2, norm_lp

logger = logging.getLogger(__name__)

M_SEARCH_MAX = 1e9


@dataclass
class KTable:
    """Constants of the time-derivative estimates, by group."""
    K11: float
    K12: float
    K13: float
    gamma: Optional[float] = None
    eta_star: Optional[float] = None
    K21: Optional[float] = None
    K22: Optional[float] = None
    K23: Optional[float] = None
    K24: Optional[float] = None
    K25: Optional[float] = None
    K31: Optional[float] = None
    K32: Optional[float] = None
    K33: Optional[float] = None
    K34: Optional[float] = None
    K35: Optional[float] = None

    def as_dict(self):
        return {key: value for key, value in self.__dict__.items() if value is not None}


def gamma_constant(params):
    r, beta = params.r, params.beta
    return ((r - 3) / (r - 1)) * (2.0 / (beta * (r - 1))) ** (2.0 / (r - 3))


def eta_star(params):
    r, beta, mu = params.r, params.beta, params.mu
    return ((r - 3) / (mu * (r - 1))) * (2.0 / (beta * mu * (r - 1))) ** (2.0 / (r - 3))


def applicable_groups(params):
    groups = ['1']
    if params.r > 3:
        groups.append('2')
    if params.d == 3 and params.r == 3 and params.beta * params.mu > 1:
        groups.append('3')
    return groups


def k_constants(params, T, groups=None):
    """Evaluate the K_ij table; groups default to those valid for the parameters."""
    r, alpha, beta, mu = params.r, params.alpha, params.beta, params.mu
    groups = applicable_groups(params) if groups is None else list(groups)

    table = KTable(
        K11=4 + 8 / (r + 1),
        K12=5 * alpha / 2 + alpha / (r + 1),
        K13=6 / alpha + 8 / ((r + 1) * alpha),
    )

    if '2' in groups:
        if r <= 3:
            raise RegimeError(f"K_2* constants need r > 3, got r = {r}")
        gamma = gamma_constant(params)
        table.gamma = gamma
        table.eta_star = eta_star(params)
        table.K21 = 4 + 4 / mu + 8 / (r + 1)
        table.K22 = 3 * alpha / 4 + 3 * alpha * gamma / (32 * mu)
        table.K23 = (7 / 2 + 1 / (r + 1) + 1 / (2 * mu)) * alpha + gamma / (2 * mu)
        table.K24 = 3 / (4 * alpha) + 3 / (4 * mu) + 3 * gamma / (4 * mu * alpha)
        table.K25 = (7 + 4 / (r + 1) + 2 / mu) * 2 / alpha

    if '3' in groups:
        if params.d != 3 or r != 3:
            raise RegimeError(f"K_3* constants need d = r = 3, got d = {params.d}, r = {r}")
        if beta * mu <= 1:
            raise RegimeError(f"K_3* constants need beta*mu > 1, got {beta * mu:g}")
        excess = beta * mu - 1
        table.K31 = 6 + 2 / excess
        table.K32 = 3 * alpha / 4
        table.K33 = (15 + 1 / excess) * alpha / 4
        table.K34 = 3 / (4 * alpha) + 3 / (8 * excess)
        table.K35 = (8 + 1 / excess) * 2 / alpha

    return table


@dataclass
class DataNorms:
    """Norms of the inverse data entering the radius M."""
    u0: float
    g_sup: float
    gt_sup: float
    g_T: float
    residual: float
    phi_l4: float


def data_norms(problem, sample_count=257):
    times = sample_times(problem.T, sample_count)
    g_sup, gt_sup = problem.g.sup_norms(times)
    residual = stationary_residual(problem.phi, problem.grad_psi, problem.params)
    return DataNorms(
        u0=norm_l2(problem.u0),
        g_sup=g_sup,
        gt_sup=gt_sup,
        g_T=problem.g.min_abs_at(problem.T),
        residual=norm_l2(residual),
        phi_l4=norm_lp(problem.phi, 4),
    )


def implicit_bound(M, norms, params, T, table):
    """Right side of the implicit ball-radius inequality for d = 2, r <= 3, evaluated at F = M."""
    alpha, mu = params.alpha, params.mu
    U0 = norms.u0 ** 2
    GF2 = (norms.g_sup * M) ** 2
    energy = (1 / T + alpha / 8) * U0 + GF2 / alpha

    first = (table.K11 / T + table.K12) * U0 + (3 * T / 4 + table.K13) * GF2
    first += ((norms.u0 + norms.g_sup * M / alpha) ** (2 / 3)
              * ((4 / mu) * energy + GF2 / (2 * mu * alpha)) ** (4 / 3)
              * ((4 / mu ** 2) * energy + 3 * T * GF2 / (8 * mu ** 2)))
    second = 8 / T + (8 / mu ** 2) * energy + GF2 / (mu ** 2 * alpha)

    rate = np.sqrt(first * second) + np.sqrt(T / alpha) * norms.gt_sup * M
    return (rate + norms.residual) / norms.g_T


def _smallest_fixed_radius(norms, params, T, table):
    excess = lambda M: implicit_bound(M, norms, params, T, table) - M
    if excess(0.0) <= 0:
        return 0.0
    grid = np.concatenate(([0.0], np.geomspace(1e-12, M_SEARCH_MAX, 400)))
    previous = grid[0]
    for M in grid[1:]:
        if excess(M) <= 0:
            low, high = previous, M
            for _ in range(200):
                middle = 0.5 * (low + high)
                if excess(middle) <= 0:
                    high = middle
                else:
                    low = middle
                if high - low <= 1e-12 * max(high, 1.0):
                    break
            return float(high)
        previous = M
    return None


@dataclass
class RadiusResult:
    value: Optional[float]
    numerator: Optional[float] = None
    denominator: Optional[float] = None
    reason: str = ''

    @property
    def defined(self):
        return self.value is not None


def compute_M(problem, k_table, norms=None):
    """Ball radius M of the fixed-point set D, or undefined with the failing inequality."""
    params, T = problem.params, problem.T
    norms = norms or data_norms(problem)
    regime = params.regime

    if regime == 'd=2,r<=3':
        value = _smallest_fixed_radius(norms, params, T, k_table)
        if value is None:
            return RadiusResult(None, reason=f"no radius in [0, {M_SEARCH_MAX:g}] satisfies the implicit bound")
        return RadiusResult(value, reason='smallest fixed radius of the implicit bound')

    alpha = params.alpha
    if regime == 'r>3':
        if k_table.K21 is None:
            raise RegimeError("radius for r > 3 needs the K_2* constants")
        if alpha <= k_table.eta_star:
            return RadiusResult(None, reason=f"alpha = {alpha:g} does not exceed eta* = {k_table.eta_star:g}")
        K1, K2, K3, K4, K5 = k_table.K21, k_table.K22, k_table.K23, k_table.K24, k_table.K25
        rate_weight = 3 / alpha + 1 / (alpha * (alpha - k_table.eta_star))
    else:
        if k_table.K31 is None:
            return RadiusResult(None, reason=f"beta*mu = {params.beta * params.mu:g} must exceed 1")
        K1, K2, K3, K4, K5 = k_table.K31, k_table.K32, k_table.K33, k_table.K34, k_table.K35
        rate_weight = 3 / alpha + 1 / alpha ** 2

    numerator = np.sqrt(8 * K1 / T ** 2 + 8 * K2 + 8 * K3 / T) * norms.u0 + norms.residual
    denominator = norms.g_T - (np.sqrt(8 * K4 + 8 * K5 / T) * norms.g_sup
                               + np.sqrt(rate_weight) * norms.gt_sup)
    if denominator <= 0:
        return RadiusResult(None, float(numerator), float(denominator),
                            reason=f"radius condition violated: denominator {denominator:.6g} <= 0")
    return RadiusResult(float(numerator / denominator), float(numerator), float(denominator),
                        reason='closed-form radius')


def final_time_bound(problem, k_table, radius, norms):
    """Lower bound on T for g = 1, u0 = 0; None when it does not apply."""
    params = problem.params
    if not (problem.g.is_constant and problem.g.constant == 1.0 and norms.u0 == 0.0):
        return None
    if params.regime == 'r>3':
        K4, K5 = k_table.K24, k_table.K25
    elif params.regime == 'd=r=3' and k_table.K34 is not None:
        K4, K5 = k_table.K34, k_table.K35
    else:
        return None
    if 8 * K4 >= 1 or not radius.defined:
        return None
    M = radius.value
    denominator = (1 - 8 * K4) * M ** 2 - norms.residual ** 2
    if denominator <= 0:
        return None
    return float(8 * M ** 2 * K5 / denominator)


@dataclass
class AdmissibilityReport:
    """Per-condition verdicts for an inverse problem."""
    regime: str
    g_T: float
    cond_1e: bool
    condition: str
    condition_lhs: float
    condition_rhs: float
    condition_holds: bool
    radius: RadiusResult
    eta_star: Optional[float] = None
    eta_star_below_alpha: Optional[bool] = None
    t_bound: Optional[float] = None
    k_table: Optional[KTable] = None
    norms: Optional[DataNorms] = None
    notes: list = field(default_factory=list)

    @property
    def condition_slack(self):
        return self.condition_rhs - self.condition_lhs

    @property
    def cond_41(self):
        return self.radius.defined

    @property
    def admissible(self):
        return self.cond_1e and self.condition_holds

    @property
    def M(self):
        return self.radius.value

    def as_pairs(self):
        pairs = [
            ('regime', self.regime),
            ('cond_1e', self.cond_1e),
            ('g_T', self.g_T),
            ('condition', self.condition),
            ('condition_lhs', self.condition_lhs),
            ('condition_rhs', self.condition_rhs),
            ('condition_slack', self.condition_slack),
            ('condition_holds', self.condition_holds),
            ('cond_41', self.cond_41),
            ('cond_41_denominator', 'n/a' if self.radius.denominator is None else self.radius.denominator),
            ('M', 'undefined' if self.radius.value is None else self.radius.value),
            ('M_reason', self.radius.reason),
            ('admissible', self.admissible),
        ]
        if self.eta_star is not None:
            pairs.append(('eta_star', self.eta_star))
            pairs.append(('eta_star_below_alpha', self.eta_star_below_alpha))
        pairs.append(('example_T_bound', 'n/a' if self.t_bound is None else self.t_bound))
        if self.k_table is not None:
            pairs.extend(self.k_table.as_dict().items())
        return pairs


def regime_condition(params, phi_l4):
    """(name, lhs, rhs, holds) for the regime's smallness condition on mu."""
    mu, alpha, beta, r = params.mu, params.alpha, params.beta, params.r
    if params.regime == 'd=2,r<=3':
        lhs = 3 / (4 * alpha ** (1 / 3)) * phi_l4 ** (4 / 3)
        return '1g1', lhs, mu, lhs <= mu
    if params.regime == 'r>3':
        lhs = (2 * (r - 3) / (alpha * (r - 1))) * (8 / (beta * mu * (r - 1))) ** (2 / (r - 3))
        return '1g2', lhs, mu, lhs < mu
    return '1g3', 1 / beta, mu, 1 / beta < mu


def check_admissibility(problem):
    params = problem.params
    norms = data_norms(problem)
    table = k_constants(params, problem.T)
    name, lhs, rhs, holds = regime_condition(params, norms.phi_l4)
    radius = compute_M(problem, table, norms)

    report = AdmissibilityReport(
        regime=params.regime,
        g_T=norms.g_T,
        cond_1e=norms.g_T > 0,
        condition=name,
        condition_lhs=float(lhs),
        condition_rhs=float(rhs),
        condition_holds=bool(holds),
        radius=radius,
        k_table=table,
        norms=norms,
    )
    if table.eta_star is not None:
        report.eta_star = table.eta_star
        report.eta_star_below_alpha = table.eta_star < params.alpha
        logger.warning(
            f"eta* = {table.eta_star:.6g}: checking eta* < alpha ({report.eta_star_below_alpha}); "
            f"the variant with the first Laplacian eigenvalue is not evaluable on the torus"
        )
    report.t_bound = final_time_bound(problem, table, radius, norms)

    logger.info(
        f"Admissibility: regime {report.regime}, {name} {'holds' if holds else 'fails'} "
        f"(lhs={lhs:.6g}, mu={rhs:.6g}), g_T={norms.g_T:.6g}, "
        f"M={'undefined' if radius.value is None else f'{radius.value:.6g}'}"
    )
    return report
