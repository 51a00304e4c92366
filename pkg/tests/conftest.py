"""Shared fixtures: grids, seeded fields, Taylor-Green data and a small inverse problem."""
import numpy as np
import pytest

from cbf import catalog
from cbf.forward import CbfParams, SamplingPolicy, pressure_gradient, solve_forward
from cbf.inverse import InverseProblem
from cbf.spectral import make_grid


@pytest.fixture
def rng():
    return np.random.default_rng(20240501)


@pytest.fixture
def grid2d():
    return make_grid(2, 32, 2 * np.pi)


@pytest.fixture
def grid3d():
    return make_grid(3, 16, 2 * np.pi)


@pytest.fixture
def small_grid():
    return make_grid(2, 16, 2 * np.pi)


@pytest.fixture
def taylor_green():
    """Factory for the unit-wavenumber Taylor-Green field on a grid."""
    def build(grid, amplitude=1.0):
        return catalog.vector_field('tg1', grid, amplitude)
    return build


def make_problem(grid, params, T=1.0, nt=100, u0_amplitude=0.1, f_amplitude=0.5, g_name='one',
                 u0_name='mix', f_name='tg2'):
    """Inverse data generated by a forward solve from a known source.

    The initial state and the source differ and both carry several Fourier modes.
    """
    u0 = catalog.vector_field(u0_name, grid, u0_amplitude)
    f_star = catalog.vector_field(f_name, grid, f_amplitude)
    g = catalog.modulation(g_name, grid)
    trajectory = solve_forward(u0, f_star, g, params, T, nt, record=SamplingPolicy(final_only=True))
    phi = trajectory.final
    grad_psi = pressure_gradient(phi, f_star, g.value(T), params)
    return InverseProblem(u0, phi, grad_psi, g, params, T), f_star


@pytest.fixture
def inverse_params():
    return CbfParams(mu=1.0, alpha=4.0, beta=1.0, r=3.0, d=2)


@pytest.fixture
def small_problem(small_grid, inverse_params):
    """(problem, f_star, nt) on a 16^2 grid with g = 1."""
    problem, f_star = make_problem(small_grid, inverse_params, nt=100)
    return problem, f_star, 100


@pytest.fixture
def write_config(tmp_path):
    """Write a config file from key/value pairs and return its path."""
    def write(name='run.cfg', **values):
        path = tmp_path / name
        lines = [f"{key.replace('__', '.')} = {value}" for key, value in values.items()]
        path.write_text("\n".join(lines) + "\n", encoding='utf-8')
        return str(path)
    return write
