"""Space-time modulation g(x, t) of the forcing F = f g."""
import logging
from dataclasses import dataclass

import numpy as np

from cbf.spectral import ScalarField

logger = logging.getLogger(__name__)

CONSTANT = 'constant'
SEPARABLE = 'separable'
TABULATED = 'tabulated'

PROFILE_KINDS = ('one', 'exp', 'cos', 'sin')


@dataclass(frozen=True)
class TimeProfile:
    """Closed-form time factor b(t): one, e^{rate t}, cos(rate t) + offset, sin(rate t)."""
    kind: str = 'one'
    rate: float = 0.0
    offset: float = 0.0

    def __post_init__(self):
        if self.kind not in PROFILE_KINDS:
            raise ValueError(f"unknown time profile '{self.kind}', expected one of {PROFILE_KINDS}")

    def value(self, t):
        if self.kind == 'one':
            return 1.0
        if self.kind == 'exp':
            return float(np.exp(self.rate * t))
        if self.kind == 'cos':
            return float(np.cos(self.rate * t) + self.offset)
        return float(np.sin(self.rate * t))

    def derivative(self, t):
        if self.kind == 'one':
            return 0.0
        if self.kind == 'exp':
            return float(self.rate * np.exp(self.rate * t))
        if self.kind == 'cos':
            return float(-self.rate * np.sin(self.rate * t))
        return float(self.rate * np.cos(self.rate * t))


class Modulation:
    """g and g_t evaluable at any grid point and time in [0, T].

    A separable modulation is a sum of terms a_i(x) b_i(t); a tabulated one holds
    samples of g and g_t on a time grid and interpolates linearly between them.
    """

    def __init__(self, kind, constant=1.0, terms=(), times=None, values=None, rates=None, name=None):
        self.kind = kind
        self.constant = float(constant)
        self.terms = tuple(terms)
        self.times = None if times is None else np.asarray(times, dtype=float)
        self.table = None if values is None else np.asarray(values, dtype=float)
        self.rate_table = None if rates is None else np.asarray(rates, dtype=float)
        self.name = name or kind

    @classmethod
    def constant_value(cls, c=1.0, name=None):
        return cls(CONSTANT, constant=c, name=name)

    @classmethod
    def separable(cls, terms, name=None):
        """terms: iterable of (ScalarField a, TimeProfile b)."""
        terms = tuple(terms)
        if not terms:
            raise ValueError("a separable modulation needs at least one term")
        return cls(SEPARABLE, terms=terms, name=name)

    @classmethod
    def tabulated(cls, times, values, rates, name=None):
        times = np.asarray(times, dtype=float)
        if times.ndim != 1 or times.size < 2 or np.any(np.diff(times) <= 0):
            raise ValueError("tabulated modulation needs at least two strictly increasing times")
        if len(values) != times.size or len(rates) != times.size:
            raise ValueError("tabulated modulation needs one g and one g_t sample per time")
        return cls(TABULATED, times=times, values=values, rates=rates, name=name)

    @property
    def is_constant(self):
        return self.kind == CONSTANT

    def _interpolate(self, table, t):
        index = int(np.clip(np.searchsorted(self.times, t, side='right') - 1, 0, self.times.size - 2))
        t0, t1 = self.times[index], self.times[index + 1]
        weight = float(np.clip((t - t0) / (t1 - t0), 0.0, 1.0))
        return (1.0 - weight) * table[index] + weight * table[index + 1]

    def value(self, t):
        """g(., t): a float for constant modulations, otherwise a grid array."""
        if self.kind == CONSTANT:
            return self.constant
        if self.kind == SEPARABLE:
            return sum(a.values * b.value(t) for a, b in self.terms)
        return self._interpolate(self.table, t)

    def rate(self, t):
        """g_t(., t) in the same form as value()."""
        if self.kind == CONSTANT:
            return 0.0
        if self.kind == SEPARABLE:
            return sum(a.values * b.derivative(t) for a, b in self.terms)
        return self._interpolate(self.rate_table, t)

    def with_term(self, a, profile, name=None):
        """g + a(x) b(t); constant modulations become separable."""
        if self.kind == TABULATED:
            raise ValueError("cannot add a closed-form term to a tabulated modulation")
        terms = list(self.terms)
        if self.kind == CONSTANT:
            terms.append((ScalarField(a.grid, np.full(a.grid.shape, self.constant)), TimeProfile('one')))
        terms.append((a, profile))
        return Modulation.separable(terms, name=name or f"{self.name}+term")

    def min_abs_at(self, t):
        """min over the grid of |g(x, t)|."""
        return float(np.min(np.abs(self.value(t))))

    def sup_norms(self, times):
        """(sup |g|, sup |g_t|) over the sampled space-time grid."""
        g_sup = max(float(np.max(np.abs(self.value(t)))) for t in times)
        rate_sup = max(float(np.max(np.abs(self.rate(t)))) for t in times)
        return g_sup, rate_sup

    def __repr__(self):
        return f"<Modulation(name='{self.name}', kind={self.kind})>"


def sample_times(T, count=257):
    """Uniform time samples on [0, T] for sup-norm evaluation."""
    return np.linspace(0.0, T, count)
