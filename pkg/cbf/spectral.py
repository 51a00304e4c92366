"""Periodic torus discretization: grids, fields, spectral operators and norms."""
import logging
import os

import numpy as np
from dotenv import load_dotenv
from scipy import fft as sfft

from cbf.errors import GridError

load_dotenv()

logger = logging.getLogger(__name__)

FFT_WORKERS = int(os.getenv('CBF_FFT_WORKERS', '1'))

PHYSICAL = 'physical'
SPECTRAL = 'spectral'


class TorusGrid:
    """Uniform collocation grid on the d-torus of period L."""

    def __init__(self, d, n, L):
        if d not in (2, 3):
            raise GridError(f"dimension must be 2 or 3, got {d}")
        if n % 2 != 0:
            raise GridError(f"points per axis must be even, got {n}")
        if n < 8:
            raise GridError(f"points per axis must be at least 8, got {n}")
        if not L > 0:
            raise GridError(f"period length must be positive, got {L}")

        self.d = int(d)
        self.n = int(n)
        self.L = float(L)
        self.shape = (self.n,) * self.d
        self.axes = tuple(range(-self.d, 0))
        self.cell_volume = (self.L / self.n) ** self.d
        self.volume = self.L ** self.d

        # 0, 1, ..., n/2 - 1, -n/2, ..., -1
        self.integer_wavenumbers = np.fft.fftfreq(self.n, 1.0 / self.n)
        self.wavenumbers = self.integer_wavenumbers * (2.0 * np.pi / self.L)

        # Nyquist mode has no odd derivative on a real grid
        derivative = self.wavenumbers.copy()
        derivative[self.n // 2] = 0.0

        self.k = self._broadcast(self.wavenumbers)
        self.k_deriv = self._broadcast(derivative)
        self.k2 = sum(k ** 2 for k in self.k)
        self.k_deriv2 = sum(k ** 2 for k in self.k_deriv)

        keep = np.abs(self.integer_wavenumbers) <= self.n / 3.0
        mask = np.ones(self.shape, dtype=bool)
        for axis_keep in self._broadcast(keep):
            mask = mask & axis_keep
        self.dealias_mask = mask

    def _broadcast(self, table):
        """Per-axis tables reshaped to broadcast over the full grid."""
        tables = []
        for axis in range(self.d):
            shape = [1] * self.d
            shape[axis] = self.n
            tables.append(np.broadcast_to(table.reshape(shape), self.shape))
        return tables

    def coordinates(self):
        """Grid node coordinates, one array per axis."""
        x = np.arange(self.n) * (self.L / self.n)
        return np.meshgrid(*([x] * self.d), indexing='ij')

    def same_as(self, other):
        return self.d == other.d and self.n == other.n and self.L == other.L

    def __repr__(self):
        return f"<TorusGrid(d={self.d}, n={self.n}, L={self.L:g})>"


def make_grid(d, n, L):
    """Build a torus grid; rejects odd n, n < 8 and non-positive L."""
    grid = TorusGrid(d, n, L)
    logger.debug(f"Created {grid}")
    return grid


def forward_transform(grid, values):
    """True Fourier coefficients of real samples over the trailing d axes."""
    return sfft.fftn(values, axes=grid.axes, norm='forward', workers=FFT_WORKERS)


def inverse_transform(grid, coefficients):
    """Real samples from Fourier coefficients over the trailing d axes."""
    return sfft.ifftn(coefficients, axes=grid.axes, norm='forward', workers=FFT_WORKERS).real


class _Field:
    """Shared storage for fields held in physical or spectral form."""

    components = None

    def __init__(self, grid, data, representation=PHYSICAL):
        if representation not in (PHYSICAL, SPECTRAL):
            raise ValueError(f"unknown representation: {representation}")
        expected = self._expected_shape(grid)
        dtype = complex if representation == SPECTRAL else float
        data = np.array(data, dtype=dtype, copy=True)
        if data.shape != expected:
            raise ValueError(f"field data has shape {data.shape}, expected {expected}")
        data.setflags(write=False)

        self.grid = grid
        self.representation = representation
        self._physical = data if representation == PHYSICAL else None
        self._spectral = data if representation == SPECTRAL else None

    def _expected_shape(self, grid):
        raise NotImplementedError

    @property
    def values(self):
        """Physical samples (read-only)."""
        if self._physical is None:
            physical = inverse_transform(self.grid, self._spectral)
            physical.setflags(write=False)
            self._physical = physical
        return self._physical

    @property
    def coefficients(self):
        """Fourier coefficients (read-only)."""
        if self._spectral is None:
            spectral = forward_transform(self.grid, self._physical)
            spectral.setflags(write=False)
            self._spectral = spectral
        return self._spectral

    def _like(self, data, representation):
        return type(self)(self.grid, data, representation)

    def to_spectral(self):
        return self._like(self.coefficients, SPECTRAL)

    def to_physical(self):
        return self._like(self.values, PHYSICAL)

    def _check_compatible(self, other):
        if type(other) is not type(self) or not self.grid.same_as(other.grid):
            raise ValueError(f"incompatible fields: {self!r} and {other!r}")

    def __add__(self, other):
        self._check_compatible(other)
        return self._like(self.values + other.values, PHYSICAL)

    def __sub__(self, other):
        self._check_compatible(other)
        return self._like(self.values - other.values, PHYSICAL)

    def __mul__(self, scalar):
        return self._like(self.values * float(scalar), PHYSICAL)

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0


class ScalarField(_Field):
    """Real scalar field on a torus grid."""

    def _expected_shape(self, grid):
        return grid.shape

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros(grid.shape))

    def __repr__(self):
        return f"<ScalarField({self.grid!r}, {self.representation})>"


class VectorField(_Field):
    """Real d-component vector field; `solenoidal` is set by projection."""

    def __init__(self, grid, data, representation=PHYSICAL, solenoidal=False):
        super().__init__(grid, data, representation)
        self.solenoidal = bool(solenoidal)

    def _expected_shape(self, grid):
        return (grid.d,) + grid.shape

    def _like(self, data, representation):
        return VectorField(self.grid, data, representation)

    def to_spectral(self):
        return VectorField(self.grid, self.coefficients, SPECTRAL, solenoidal=self.solenoidal)

    def to_physical(self):
        return VectorField(self.grid, self.values, PHYSICAL, solenoidal=self.solenoidal)

    @property
    def components(self):
        return [ScalarField(self.grid, c) for c in self.values]

    @classmethod
    def zeros(cls, grid):
        return cls(grid, np.zeros((grid.d,) + grid.shape), solenoidal=True)

    @classmethod
    def from_components(cls, grid, components, solenoidal=False):
        return cls(grid, np.stack([np.asarray(c, dtype=float) for c in components]), solenoidal=solenoidal)

    def divergence_max(self):
        """Max modulus of the spectral divergence."""
        return float(np.max(np.abs(_divergence_coefficients(self.grid, self.coefficients))))

    def check_solenoidal(self, rel_tol=1e-10):
        scale = float(np.max(np.abs(self.coefficients)))
        return self.divergence_max() <= rel_tol * max(scale, np.finfo(float).tiny)

    def __repr__(self):
        flag = ', solenoidal' if self.solenoidal else ''
        return f"<VectorField({self.grid!r}, {self.representation}{flag})>"


def _divergence_coefficients(grid, coefficients):
    return sum(1j * grid.k_deriv[i] * coefficients[i] for i in range(grid.d))


def leray_coefficients(grid, coefficients):
    k = grid.k_deriv
    k2 = grid.k_deriv2
    safe = np.where(k2 > 0, k2, 1.0)
    k_dot = sum(k[i] * coefficients[i] for i in range(grid.d))
    weight = np.where(k2 > 0, k_dot / safe, 0.0)
    return np.stack([coefficients[i] - k[i] * weight for i in range(grid.d)])


def leray_project(v):
    """Helmholtz projection P = I - k k^T / |k|^2; the mean mode passes through."""
    projected = leray_coefficients(v.grid, v.coefficients)
    return VectorField(v.grid, projected, SPECTRAL, solenoidal=True)


def gradient_part(v):
    """Complementary projection Q = I - P onto gradients."""
    projected = leray_coefficients(v.grid, v.coefficients)
    return VectorField(v.grid, v.coefficients - projected, SPECTRAL)


def gradient(s):
    grid = s.grid
    coefficients = np.stack([1j * grid.k_deriv[i] * s.coefficients for i in range(grid.d)])
    return VectorField(grid, coefficients, SPECTRAL)


def divergence(v):
    return ScalarField(v.grid, _divergence_coefficients(v.grid, v.coefficients), SPECTRAL)


def laplacian(field):
    """Spectral Laplacian of a scalar or vector field."""
    coefficients = -field.grid.k2 * field.coefficients
    if isinstance(field, VectorField):
        return VectorField(field.grid, coefficients, SPECTRAL, solenoidal=field.solenoidal)
    return ScalarField(field.grid, coefficients, SPECTRAL)


def dealias(field):
    """Zero every mode with some |k_i| > n/3."""
    coefficients = field.coefficients * field.grid.dealias_mask
    if isinstance(field, VectorField):
        return VectorField(field.grid, coefficients, SPECTRAL, solenoidal=field.solenoidal)
    return ScalarField(field.grid, coefficients, SPECTRAL)


def pointwise_magnitude(field):
    """|v(x)| per grid node; the absolute value for scalar fields."""
    if isinstance(field, VectorField):
        return np.sqrt(np.sum(field.values ** 2, axis=0))
    return np.abs(field.values)


def inner(u, v):
    """Discrete L2 inner product with quadrature weight (L/n)^d."""
    return float(np.sum(u.values * v.values) * u.grid.cell_volume)


def norm_l2(v):
    return float(np.sqrt(np.sum(v.values ** 2) * v.grid.cell_volume))


def norm_h1_semi(v):
    """‖∇v‖ via Parseval on |k|^2-weighted coefficients."""
    grid = v.grid
    energy = np.sum(grid.k2 * np.abs(v.coefficients) ** 2) * grid.volume
    return float(np.sqrt(energy))


def norm_hminus1(v):
    """Dual-norm proxy: |k|^-2 weighted coefficient sum, mean mode dropped."""
    grid = v.grid
    weight = np.where(grid.k2 > 0, 1.0 / np.where(grid.k2 > 0, grid.k2, 1.0), 0.0)
    return float(np.sqrt(np.sum(weight * np.abs(v.coefficients) ** 2) * grid.volume))


def norm_lp(v, p):
    if p < 1:
        raise ValueError(f"L^p norm needs p >= 1, got {p}")
    magnitude = pointwise_magnitude(v)
    return float((np.sum(magnitude ** p) * v.grid.cell_volume) ** (1.0 / p))


def norm_linf(v):
    return float(np.max(pointwise_magnitude(v)))
