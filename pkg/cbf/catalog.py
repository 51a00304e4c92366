"""Builtin named fields and modulations used by configs and tests."""
import logging

import numpy as np

from cbf.modulation import Modulation, TimeProfile
from cbf.spectral import ScalarField, VectorField, forward_transform, gradient, leray_project, norm_l2

logger = logging.getLogger(__name__)


def _wave(grid):
    return 2.0 * np.pi / grid.L


def _taylor_green(grid, mode=1):
    kappa = mode * _wave(grid)
    if grid.d == 2:
        x, y = grid.coordinates()
        return [np.sin(kappa * x) * np.cos(kappa * y), -np.cos(kappa * x) * np.sin(kappa * y)]
    x, y, z = grid.coordinates()
    return [np.sin(kappa * x) * np.cos(kappa * y) * np.cos(kappa * z),
            -np.cos(kappa * x) * np.sin(kappa * y) * np.cos(kappa * z),
            np.zeros(grid.shape)]


def _shear(grid):
    kappa = _wave(grid)
    if grid.d == 2:
        x, y = grid.coordinates()
        return [np.sin(kappa * y), 0.5 * np.cos(kappa * x)]
    x, y, z = grid.coordinates()
    return [np.sin(kappa * y), np.sin(kappa * z), np.sin(kappa * x)]


def _abc(grid):
    if grid.d != 3:
        raise ValueError("the 'abc' flow is three-dimensional")
    kappa = _wave(grid)
    x, y, z = grid.coordinates()
    return [np.sin(kappa * z) + np.cos(kappa * y),
            np.sin(kappa * x) + np.cos(kappa * z),
            np.sin(kappa * y) + np.cos(kappa * x)]


def random_solenoidal(grid, rng, kmax=4, amplitude=1.0):
    """Band-limited, zero-mean, solenoidal field with L2 norm `amplitude`."""
    noise = rng.standard_normal((grid.d,) + grid.shape)
    keep = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        keep = keep & (np.abs(grid.integer_wavenumbers) <= kmax).reshape(shape)
    keep[(0,) * grid.d] = False
    coefficients = forward_transform(grid, noise) * keep
    field = leray_project(VectorField(grid, coefficients, 'spectral'))
    size = norm_l2(field)
    if size == 0:
        return VectorField.zeros(grid)
    return VectorField(grid, field.values * (amplitude / size), solenoidal=True)


def random_scalar(grid, rng, kmax=4):
    """Band-limited zero-mean scalar field with unit sup norm."""
    noise = rng.standard_normal(grid.shape)
    keep = np.ones(grid.shape, dtype=bool)
    for axis in range(grid.d):
        shape = [1] * grid.d
        shape[axis] = grid.n
        keep = keep & (np.abs(grid.integer_wavenumbers) <= kmax).reshape(shape)
    keep[(0,) * grid.d] = False
    field = ScalarField(grid, forward_transform(grid, noise) * keep, 'spectral')
    return ScalarField(grid, field.values / np.max(np.abs(field.values)))


VECTOR_FIELDS = {
    'tg1': lambda grid: _taylor_green(grid, 1),
    'tg2': lambda grid: _taylor_green(grid, 2),
    'shear': _shear,
    'abc': _abc,
}


def vector_field(name, grid, amplitude=1.0, rng=None):
    """Named solenoidal field; 'random' needs an rng."""
    if name == 'zero':
        return VectorField.zeros(grid)
    if name == 'random':
        if rng is None:
            raise ValueError("the 'random' field needs a seeded generator")
        return random_solenoidal(grid, rng, amplitude=amplitude)
    if name == 'mix':
        components = [a + 0.5 * b for a, b in zip(_taylor_green(grid, 1), _shear(grid))]
    elif name in VECTOR_FIELDS:
        components = VECTOR_FIELDS[name](grid)
    else:
        raise ValueError(f"unknown field '{name}', expected one of {sorted(vector_names())}")
    field = leray_project(VectorField.from_components(grid, [amplitude * c for c in components]))
    return VectorField(grid, field.values, solenoidal=True)


def vector_names():
    return set(VECTOR_FIELDS) | {'zero', 'random', 'mix'}


def gradient_field(name, grid, rng=None):
    """Unit-norm pure gradient used as a grad psi direction."""
    if name == 'random':
        if rng is None:
            raise ValueError("the 'random' gradient needs a seeded generator")
        potential = random_scalar(grid, rng)
    elif name == 'cos':
        coordinates = grid.coordinates()
        potential = ScalarField(grid, sum(np.cos(_wave(grid) * x) for x in coordinates))
    else:
        raise ValueError(f"unknown gradient shape '{name}', expected 'cos' or 'random'")
    field = gradient(potential)
    return field * (1.0 / norm_l2(field))


def scalar_shape(name, grid, rng=None):
    """Unit sup-norm scalar shape a(x) for modulation perturbations."""
    if name == 'one':
        return ScalarField(grid, np.ones(grid.shape))
    if name == 'cos':
        return ScalarField(grid, np.cos(_wave(grid) * grid.coordinates()[0]))
    if name == 'random':
        if rng is None:
            raise ValueError("the 'random' shape needs a seeded generator")
        return random_scalar(grid, rng)
    raise ValueError(f"unknown scalar shape '{name}', expected 'one', 'cos' or 'random'")


def modulation(name, grid):
    """Named g(x, t): one, decay, modulated, pulse."""
    if name == 'one':
        return Modulation.constant_value(1.0, name='one')
    ones = ScalarField(grid, np.ones(grid.shape))
    if name == 'decay':
        return Modulation.separable([(ones, TimeProfile('exp', rate=-1.0))], name='decay')
    if name == 'modulated':
        profile = ScalarField(grid, 2.0 + np.cos(_wave(grid) * grid.coordinates()[0]))
        return Modulation.separable([(profile, TimeProfile('exp', rate=-1.0))], name='modulated')
    if name == 'pulse':
        return Modulation.separable([(ones, TimeProfile('cos', rate=1.0, offset=2.0))], name='pulse')
    raise ValueError(f"unknown modulation '{name}', expected one of {MODULATION_NAMES}")


MODULATION_NAMES = ('one', 'decay', 'modulated', 'pulse')
