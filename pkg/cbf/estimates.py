"""Numerical audit of the a-priori energy estimates on forward trajectories."""
import logging
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.integrate import cumulative_trapezoid

from cbf.admissibility import eta_star, k_constants
from cbf.catalog import random_solenoidal
from cbf.errors import RegimeError
from cbf.forward import convection, damping_values, jacobian_values, rhs
from cbf.modulation import sample_times
from cbf.spectral import (
    ScalarField, VectorField, gradient, inner, inverse_transform, laplacian, leray_project,
    norm_h1_semi, norm_l2, norm_lp,
)

logger = logging.getLogger(__name__)

LEMMA_IDS = (
    '3.1a', '3.1b', '3.1c', '3.1d', '3.2i', '3.2ii', '3.2iii',
    '3.3i', '3.3ii', '3.3iii', '3.3iv', '3.3v', '3.3vi',
    '3.4i', '3.4ii', '3.4iii', 'B.1',
)

EQUATIONS = {
    '3.1a': 'sup |u|', '3.1b': 'dissipation integral', '3.1c': 'min |grad u|^2',
    '3.1d': 'min |u|_{r+1}^{r+1}', '3.2i': 'sup |grad u|^2 / int |Lap u|^2',
    '3.2ii': 'weighted gradient, r > 3', '3.2iii': 'weighted gradient, d = r = 3',
    '3.3i': 'int |u_t|^2', '3.3ii': 'int |u_t|^2, r > 3', '3.3iii': 'int |u_t|^2, d = r = 3',
    '3.3iv': 'min |u_t|^2', '3.3v': 'min |u_t|^2, r > 3', '3.3vi': 'min |u_t|^2, d = r = 3',
    '3.4i': 'sup |u_t|^2', '3.4ii': 'sup |u_t|^2, r > 3', '3.4iii': 'sup |u_t|^2, d = r = 3',
    'B.1': 'energy equality',
}

# |u|^2 below this fraction of its maximum counts as a node
NODE_TOL = 1e-24


def _gradient_tensor(u):
    """grads[i, j] = d_j u_i in physical space."""
    grid = u.grid
    d = grid.d
    coefficients = np.stack([1j * grid.k_deriv[j] * u.coefficients[i] for i in range(d) for j in range(d)])
    return inverse_transform(grid, coefficients).reshape((d, d) + grid.shape)


def weighted_gradient_energy(u, r):
    """Integral of |u|^{r-1} |grad u|^2."""
    grads = _gradient_tensor(u)
    weight = np.sum(u.values ** 2, axis=0) ** ((r - 1) / 2.0)
    return float(np.sum(weight * np.sum(grads ** 2, axis=(0, 1))) * u.grid.cell_volume)


@dataclass
class EnergyLedger:
    """Norm time series and cumulative integrals along a trajectory."""
    times: np.ndarray
    norm_h: np.ndarray
    norm_grad: np.ndarray
    norm_lr1: np.ndarray
    norm_rate: np.ndarray
    norm_lap: np.ndarray
    weighted_grad: np.ndarray
    int_grad2: np.ndarray
    int_h2: np.ndarray
    int_lr1: np.ndarray
    int_rate2: np.ndarray
    int_lap2: np.ndarray
    int_weighted: np.ndarray
    u0_norm: float
    f_norm: float
    g_sup: float
    gt_sup: float
    r: float
    t1: Optional[float] = None
    t2: Optional[float] = None
    landmarks: dict = field(default_factory=dict)

    @property
    def T(self):
        return float(self.times[-1])

    def rows(self):
        columns = ('norm_h', 'norm_grad', 'norm_lr1', 'norm_rate', 'norm_lap',
                   'int_grad2', 'int_h2', 'int_lr1', 'int_rate2', 'int_lap2', 'int_weighted')
        for index, t in enumerate(self.times):
            yield [t] + [getattr(self, c)[index] for c in columns]


def _window_argmin(times, values, start, stop):
    inside = np.nonzero((times >= start - 1e-12) & (times <= stop + 1e-12))[0]
    if inside.size == 0:
        return None
    return int(inside[np.argmin(values[inside])])


def build_ledger(traj, f, g, params):
    """Norms via the spectral core, u_t via the equation, integrals by trapezoid."""
    r = params.r
    times = np.asarray(traj.times, dtype=float)
    rows = []
    for index, (t, u) in enumerate(zip(times, traj.snapshots)):
        rate = traj.u_t[index] if traj.u_t is not None else rhs(u, f, g, t, params)
        rows.append((
            norm_l2(u), norm_h1_semi(u), norm_lp(u, r + 1), norm_l2(rate),
            norm_l2(laplacian(u)), weighted_gradient_energy(u, r),
        ))
    h, grad, lr1, rate, lap, weighted = (np.array(column) for column in zip(*rows))

    def integral(values):
        if times.size < 2:
            return np.zeros_like(values)
        return cumulative_trapezoid(values, times, initial=0.0)

    T = float(times[-1])
    g_sup, gt_sup = g.sup_norms(np.union1d(times, sample_times(T)))
    ledger = EnergyLedger(
        times=times, norm_h=h, norm_grad=grad, norm_lr1=lr1, norm_rate=rate, norm_lap=lap,
        weighted_grad=weighted,
        int_grad2=integral(grad ** 2), int_h2=integral(h ** 2), int_lr1=integral(lr1 ** (r + 1)),
        int_rate2=integral(rate ** 2), int_lap2=integral(lap ** 2), int_weighted=integral(weighted),
        u0_norm=float(h[0]), f_norm=0.0 if f is None else norm_l2(f),
        g_sup=g_sup, gt_sup=gt_sup, r=r,
    )

    first = _window_argmin(times, grad ** 2, T / 8, 2 * T / 8)
    second = _window_argmin(times, rate ** 2, 2 * T / 8, 3 * T / 8)
    ledger.t1 = None if first is None else float(times[first])
    ledger.t2 = None if second is None else float(times[second])
    for m in range(1, 9):
        index = int(np.argmin(np.abs(times - m * T / 8)))
        ledger.landmarks[m] = float(times[index])
    return ledger


@dataclass
class LemmaVerdict:
    lemma_id: str
    regime: str
    lhs: float = float('nan')
    rhs: float = float('nan')
    applicable: bool = True
    ratio_form: bool = False
    tol_rel: float = 1e-2
    c_max: float = 100.0
    time: Optional[float] = None
    equation: str = ''
    note: str = ''

    @property
    def slack(self):
        return self.rhs - self.lhs

    @property
    def ratio(self):
        if self.rhs > 0:
            return self.lhs / self.rhs
        return 0.0 if self.lhs <= 0 else float('inf')

    @property
    def passed(self):
        if not self.applicable:
            return True
        if self.ratio_form:
            return self.ratio <= self.c_max
        return self.slack >= -self.tol_rel * abs(self.rhs)

    @property
    def verdict(self):
        if not self.applicable:
            return 'n/a'
        return 'pass' if self.passed else 'FAIL'


def regime_tag(params):
    return f"d={params.d},r={params.r:g}"


class _Audit:
    """Shared quantities for the lemma checks on one ledger."""

    def __init__(self, ledger, params, T):
        self.ledger = ledger
        self.params = params
        self.T = T
        self.U0 = ledger.u0_norm ** 2
        self.GF = ledger.g_sup * ledger.f_norm
        self.GF2 = self.GF ** 2
        self.GtF2 = (ledger.gt_sup * ledger.f_norm) ** 2
        self.energy = (1 / T + params.alpha / 8) * self.U0 + self.GF2 / params.alpha

    def interp(self, values, t):
        return float(np.interp(t, self.ledger.times, values))

    def worst(self, lhs, rhs, mask):
        """Index of the smallest relative slack among masked times."""
        indices = np.nonzero(mask)[0]
        scale = np.maximum(np.abs(rhs[indices]), np.finfo(float).tiny)
        pick = indices[int(np.argmin((rhs[indices] - lhs[indices]) / scale))]
        return float(lhs[pick]), float(rhs[pick]), float(self.ledger.times[pick])

    def first_bracket(self):
        """Right side of the integrated time-derivative bound for d = 2, r <= 3, with C = 1."""
        p, T = self.params, self.T
        table = k_constants(p, T, groups=['1'])
        mu, alpha = p.mu, p.alpha
        value = (table.K11 / T + table.K12) * self.U0 + (3 * T / 4 + table.K13) * self.GF2
        value += ((self.ledger.u0_norm + self.GF / alpha) ** (2 / 3)
                  * ((4 / mu) * self.energy + self.GF2 / (2 * mu * alpha)) ** (4 / 3)
                  * ((4 / mu ** 2) * self.energy + 3 * T * self.GF2 / (8 * mu ** 2)))
        return value

    def group_bracket(self, group):
        p, T = self.params, self.T
        table = k_constants(p, T, groups=[group])
        K = [getattr(table, f"K{group}{i}") for i in range(1, 6)]
        return ((K[0] / T + K[1] * T + K[2]) * self.U0 + (K[3] * T + K[4]) * self.GF2
                + 3 * T * self.GtF2 / (8 * p.alpha))


def _window(ledger, start, stop):
    return (ledger.times >= start - 1e-12) & (ledger.times <= stop + 1e-12)


def check_lemma(lemma_id, ledger, params, T, tol_rel=1e-2, c_max=100.0):
    """Evaluate one printed estimate on the ledger."""
    if lemma_id not in EQUATIONS:
        raise ValueError(f"unknown lemma id '{lemma_id}'")
    verdict = LemmaVerdict(lemma_id, regime_tag(params), tol_rel=tol_rel, c_max=c_max,
                           equation=EQUATIONS[lemma_id])
    audit = _Audit(ledger, params, T)
    mu, alpha, beta, r, d = params.mu, params.alpha, params.beta, params.r, params.d
    times = ledger.times
    two_d_low = d == 2 and r <= 3
    three_three = d == 3 and r == 3 and beta * mu > 1

    def not_applicable(reason):
        verdict.applicable = False
        verdict.note = reason
        return verdict

    def need_time(value, name):
        if value is None:
            raise LookupError(f"no recorded time in the {name} window")
        return value

    try:
        if lemma_id == '3.1a':
            verdict.lhs = float(np.max(ledger.norm_h))
            verdict.rhs = ledger.u0_norm + audit.GF / alpha

        elif lemma_id == '3.1b':
            lhs = mu * ledger.int_grad2 + beta * ledger.int_lr1
            rhs = 0.5 * audit.U0 + times * audit.GF * (ledger.u0_norm + audit.GF / alpha)
            verdict.lhs, verdict.rhs, verdict.time = audit.worst(lhs, rhs, np.ones_like(times, dtype=bool))

        elif lemma_id == '3.1c':
            index = _window_argmin(times, ledger.norm_grad ** 2, T / 8, 2 * T / 8)
            index = need_time(index, '(T/8, 2T/8)')
            verdict.lhs, verdict.time = float(ledger.norm_grad[index] ** 2), float(times[index])
            verdict.rhs = (4 / mu) * audit.energy

        elif lemma_id == '3.1d':
            index = _window_argmin(times, ledger.norm_lr1 ** (r + 1), T / 8, 2 * T / 8)
            index = need_time(index, '(T/8, 2T/8)')
            verdict.lhs, verdict.time = float(ledger.norm_lr1[index] ** (r + 1)), float(times[index])
            verdict.rhs = (4 / beta) * audit.energy

        elif lemma_id == '3.2i':
            if not two_d_low:
                return not_applicable('needs d = 2 and r <= 3')
            t1 = need_time(ledger.t1, '(T/8, 2T/8)')
            after = times >= t1
            sup_lhs = float(np.max(ledger.norm_grad[after] ** 2))
            sup_rhs = (4 / mu) * audit.energy + audit.GF2 / (2 * mu * alpha)
            lap_lhs = ledger.int_lap2 - audit.interp(ledger.int_lap2, t1)
            lap_rhs = (4 / mu ** 2) * audit.energy + (times - t1) * audit.GF2 / mu ** 2
            lap = audit.worst(lap_lhs, lap_rhs, after)
            if (sup_rhs - sup_lhs) / max(sup_rhs, 1e-300) <= (lap[1] - lap[0]) / max(lap[1], 1e-300):
                verdict.lhs, verdict.rhs, verdict.time, verdict.equation = sup_lhs, sup_rhs, t1, 'sup |grad u|^2'
            else:
                verdict.lhs, verdict.rhs, verdict.time = lap
                verdict.equation = 'int |Lap u|^2'

        elif lemma_id in ('3.2ii', '3.2iii'):
            if lemma_id == '3.2ii':
                if r <= 3:
                    return not_applicable('needs r > 3')
                eta = (2 * (r - 3) / (mu * (r - 1))) * (4 / (beta * mu * (r - 1))) ** (2 / (r - 3))
                if eta >= 2 * alpha:
                    return not_applicable(f"eta = {eta:.6g} is not below 2 alpha")
            elif not three_three:
                return not_applicable('needs d = r = 3 and beta mu > 1')
            t1 = need_time(ledger.t1, '(T/8, 2T/8)')
            after = times >= t1
            running_sup = np.maximum.accumulate(np.where(after, ledger.norm_grad ** 2, 0.0))
            if lemma_id == '3.2ii':
                lhs = (running_sup + (2 * alpha - eta) * (ledger.int_grad2 - audit.interp(ledger.int_grad2, t1))
                       + beta * (ledger.int_weighted - audit.interp(ledger.int_weighted, t1)))
            else:
                lhs = (running_sup + mu * (ledger.int_lap2 - audit.interp(ledger.int_lap2, t1))
                       + 2 * (beta - 1 / mu) * (ledger.int_weighted - audit.interp(ledger.int_weighted, t1)))
            rhs = (4 / mu) * audit.energy + 2 * (times - t1) * audit.GF2 / mu
            verdict.lhs, verdict.rhs, verdict.time = audit.worst(lhs, rhs, after)

        elif lemma_id in ('3.3i', '3.3ii', '3.3iii'):
            group = {'3.3i': None, '3.3ii': '2', '3.3iii': '3'}[lemma_id]
            if group is None and not two_d_low:
                return not_applicable('needs d = 2 and r <= 3')
            if group == '2' and r <= 3:
                return not_applicable('needs r > 3')
            if group == '3' and not three_three:
                return not_applicable('needs d = r = 3 and beta mu > 1')
            t1 = need_time(ledger.t1, '(T/8, 2T/8)')
            verdict.lhs = audit.interp(ledger.int_rate2, 3 * T / 8) - audit.interp(ledger.int_rate2, t1)
            verdict.time = t1
            if group is None:
                verdict.rhs = audit.first_bracket()
                verdict.ratio_form = True
            else:
                verdict.rhs = audit.group_bracket(group)

        elif lemma_id in ('3.3iv', '3.3v', '3.3vi'):
            group = {'3.3iv': None, '3.3v': '2', '3.3vi': '3'}[lemma_id]
            if group is None and not two_d_low:
                return not_applicable('needs d = 2 and r <= 3')
            if group == '2' and r <= 3:
                return not_applicable('needs r > 3')
            if group == '3' and not three_three:
                return not_applicable('needs d = r = 3 and beta mu > 1')
            index = need_time(_window_argmin(times, ledger.norm_rate ** 2, 2 * T / 8, 3 * T / 8),
                              '(2T/8, 3T/8)')
            verdict.lhs, verdict.time = float(ledger.norm_rate[index] ** 2), float(times[index])
            if group is None:
                verdict.rhs = (8 / T) * audit.first_bracket()
                verdict.ratio_form = True
            else:
                verdict.rhs = (8 / T) * audit.group_bracket(group)

        elif lemma_id in ('3.4i', '3.4ii', '3.4iii'):
            group = {'3.4i': None, '3.4ii': '2', '3.4iii': '3'}[lemma_id]
            if group is None and not two_d_low:
                return not_applicable('needs d = 2 and r <= 3')
            if group == '2':
                if r <= 3:
                    return not_applicable('needs r > 3')
                threshold = eta_star(params)
                if threshold >= alpha:
                    return not_applicable(f"eta* = {threshold:.6g} is not below alpha")
            if group == '3' and not three_three:
                return not_applicable('needs d = r = 3 and beta mu > 1')
            t2 = need_time(ledger.t2, '(2T/8, 3T/8)')
            verdict.lhs = float(np.max(ledger.norm_rate[times >= t2] ** 2))
            verdict.time = t2
            if group is None:
                verdict.rhs = (audit.first_bracket()
                               * (8 / T + (8 / mu ** 2) * audit.energy + audit.GF2 / (mu ** 2 * alpha))
                               + T * audit.GtF2 / alpha)
                verdict.ratio_form = True
            elif group == '2':
                verdict.rhs = (8 / T) * audit.group_bracket('2') + audit.GtF2 / (alpha * (alpha - threshold))
            else:
                verdict.rhs = (8 / T) * audit.group_bracket('3') + audit.GtF2 / alpha ** 2

        else:
            lhs = (ledger.norm_h ** 2 + 2 * mu * ledger.int_grad2 + alpha * ledger.int_h2
                   + 2 * beta * ledger.int_lr1)
            rhs = audit.U0 + times * audit.GF2 / alpha
            verdict.lhs, verdict.rhs, verdict.time = audit.worst(lhs, rhs, np.ones_like(times, dtype=bool))

    except (LookupError, RegimeError) as e:
        return not_applicable(str(e))

    if not verdict.passed:
        logger.warning(f"Lemma {lemma_id} ({verdict.equation}) failed: lhs={verdict.lhs:.6g}, rhs={verdict.rhs:.6g}")
    return verdict


def audit_all(ledger, params, T, tol_rel=1e-2, c_max=100.0):
    return [check_lemma(lemma_id, ledger, params, T, tol_rel, c_max) for lemma_id in LEMMA_IDS]


@dataclass
class IdentityCheck:
    lhs: float
    rhs: float
    rel_err: float


def _relative_gap(a, b):
    scale = max(abs(a), abs(b))
    return abs(a - b) / scale if scale > 0 else 0.0


def verify_damping_identity(u, r):
    """<-Lap u, |u|^{r-1} u> against its integrated-by-parts form."""
    if r < 1:
        raise ValueError(f"damping exponent must be at least 1, got {r}")
    values = u.values
    square = np.sum(values ** 2, axis=0)
    if 1 < r < 3 and np.min(square) <= NODE_TOL * np.max(square):
        raise ValueError("for 1 < r < 3 the field must stay away from zero on the grid")

    volume = u.grid.cell_volume
    lhs = float(np.sum(-laplacian(u).values * damping_values(values, r)) * volume)
    grads = _gradient_tensor(u)
    gradient_square = np.sum(grads ** 2, axis=(0, 1))
    rhs = float(np.sum(gradient_square * square ** ((r - 1) / 2.0)) * volume)
    if r > 1:
        # grad |u|^2 = 2 sum_i u_i grad u_i
        magnitude_gradient = 2.0 * np.einsum('i...,ij...->j...', values, grads)
        rhs += (r - 1) / 4.0 * float(
            np.sum(square ** ((r - 3) / 2.0) * np.sum(magnitude_gradient ** 2, axis=0)) * volume)
    return IdentityCheck(lhs, rhs, _relative_gap(lhs, rhs))


@dataclass
class MonotonicityCheck:
    pairing: float
    lower_bound: float
    split_bound: float
    split_lower: Optional[float]
    passed: bool


def verify_monotonicity(u1, u2, r, beta):
    """beta <C(u1) - C(u2), u1 - u2> >= (beta / 2^r) |u1 - u2|_{L^{r+1}}^{r+1}, with the split bounds."""
    a, b = u1.values, u2.values
    diff = a - b
    volume = u1.grid.cell_volume
    diff_square = np.sum(diff ** 2, axis=0)
    pairing = beta * float(np.sum((damping_values(a, r) - damping_values(b, r)) * diff) * volume)
    lower = beta / 2 ** r * float(np.sum(diff_square ** ((r + 1) / 2.0)) * volume)

    weights = [np.sum(v ** 2, axis=0) ** ((r - 1) / 2.0) for v in (a, b)]
    split = 0.5 * beta * sum(float(np.sum(w * diff_square) * volume) for w in weights)
    margin = 1e-10 * (1.0 + abs(pairing))
    passed = pairing >= lower - margin and pairing >= split - margin

    split_lower = None
    if r >= 2:
        # valid only where |a - b|^{r-1} is convex in the moduli
        split_lower = 2 ** (2 - r) * beta / 4 * float(np.sum(diff_square ** ((r + 1) / 2.0)) * volume)
        passed = passed and split_lower <= 0.5 * split + margin
    return MonotonicityCheck(pairing, lower, split, split_lower, passed)


@dataclass
class PositivityCheck:
    value: float
    passed: bool


def verify_cprime_positivity(u, w, r):
    """<C'(u) w, w> >= 0."""
    volume = u.grid.cell_volume
    value = float(np.sum(jacobian_values(u.values, w.values, r) * w.values) * volume)
    return PositivityCheck(value, value >= -1e-12 * norm_l2(w) ** 2)


def jacobian_fd_error(u, w, r, eps=1e-6):
    """Relative gap between C'(u) w and a central difference of C."""
    exact = jacobian_values(u.values, w.values, r)
    fd = (damping_values(u.values + eps * w.values, r) - damping_values(u.values - eps * w.values, r)) / (2 * eps)
    scale = float(np.max(np.abs(exact)))
    return float(np.max(np.abs(fd - exact))) / scale if scale > 0 else float(np.max(np.abs(fd)))


def _property(lemma_id, equation, value, bound, regime, note=''):
    """Verdict for a property whose value must not exceed a tolerance."""
    return LemmaVerdict(lemma_id, regime, lhs=float(value), rhs=float(bound), tol_rel=0.0,
                        equation=equation, note=note)


def structural_checks(grid, params, rng, trials=5):
    """Leray, convection, damping and monotonicity properties on random band-limited fields."""
    regime = regime_tag(params)
    r, beta = params.r, params.beta
    kmax = max(1, grid.n // 16)
    worst = {key: 0.0 for key in ('idempotent', 'orthogonal', 'skew', 'identity', 'fd', 'positivity')}
    monotone = True

    for _ in range(trials):
        v = VectorField(grid, rng.standard_normal((grid.d,) + grid.shape))
        q = ScalarField(grid, rng.standard_normal(grid.shape))
        projected = leray_project(v)
        worst['idempotent'] = max(worst['idempotent'],
                                  norm_l2(leray_project(projected) - projected) / norm_l2(v))
        grad_q = gradient(q)
        worst['orthogonal'] = max(worst['orthogonal'],
                                  abs(inner(projected, grad_q)) / (norm_l2(v) * norm_l2(grad_q)))

        u = random_solenoidal(grid, rng, kmax=kmax)
        w = random_solenoidal(grid, rng, kmax=kmax)
        worst['skew'] = max(worst['skew'],
                            abs(inner(convection(u), u)) / (norm_l2(u) * norm_h1_semi(u)))
        if r >= 3 or r == 1:
            worst['identity'] = max(worst['identity'], verify_damping_identity(u, r).rel_err)
        worst['fd'] = max(worst['fd'], jacobian_fd_error(u, w, r))
        positivity = verify_cprime_positivity(u, w, r)
        worst['positivity'] = min(worst['positivity'], positivity.value / norm_l2(w) ** 2)
        monotone = monotone and verify_monotonicity(u, w, r, beta).passed

    verdicts = [
        _property('prop.leray_idempotent', 'P^2=P', worst['idempotent'], 1e-11, regime),
        _property('prop.leray_orthogonal', '<Pv,grad q>=0', worst['orthogonal'], 1e-11, regime),
        _property('prop.convection_skew', '<conv(u),u>=0', worst['skew'], 1e-11, regime),
        _property('prop.cprime_fd', 'C\' vs central difference', worst['fd'], 1e-7, regime),
        _property('prop.cprime_positive', '<C'"'"'(u)w, w> >= 0', -worst['positivity'], 1e-12, regime),
        _property('prop.monotonicity', 'damping monotonicity', 0.0 if monotone else 1.0, 0.0, regime),
    ]
    identity = _property('prop.damping_identity', 'div-free damping identity', worst['identity'], 1e-6, regime)
    if 1 < r < 3:
        identity.applicable = False
        identity.note = 'needs fields bounded away from zero for 1 < r < 3'
    verdicts.append(identity)
    return verdicts
