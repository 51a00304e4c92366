"""Ground-truth inverse problems generated by forward solves."""
import logging
import os
from dataclasses import dataclass

import numpy as np
from dotenv import dotenv_values

from cbf import catalog
from cbf.admissibility import check_admissibility
from cbf.forward import CbfParams, SamplingPolicy, pressure_gradient, solve_forward
from cbf.inverse import InverseProblem
from cbf.snapshots import read_field, write_field, write_trajectory
from cbf.spectral import VectorField, leray_project

logger = logging.getLogger(__name__)

PROBLEM_FILE = 'problem.txt'
MANIFEST_FILE = 'manifest.txt'
FIELD_FILES = ('u0.cbff', 'f_star.cbff', 'phi.cbff', 'grad_psi.cbff')


@dataclass
class ManufacturedProblem:
    problem: InverseProblem
    f_star: VectorField
    trajectory: object
    g_name: str
    nt: int


def sampling_policy(config):
    return SamplingPolicy(every=config.record_every or None)


def build_field(source, grid, amplitude=1.0, rng=None):
    """Catalog name or snapshot path, projected onto solenoidal fields."""
    if source.endswith('.cbff'):
        field = read_field(source)
        if not field.grid.same_as(grid):
            raise ValueError(f"{source} lives on {field.grid!r}, expected {grid!r}")
        projected = leray_project(field)
        return VectorField(grid, projected.values * amplitude, solenoidal=True)
    return catalog.vector_field(source, grid, amplitude, rng=rng)


def manufacture(config):
    """Solve forward from (u0, f*, g) and package phi = u(T), grad psi = grad p(T)."""
    grid = config.grid()
    params = config.params
    rng = np.random.default_rng(config.seed)
    u0 = build_field(config.data.u0, grid, config.data.u0_amplitude, rng)
    f_star = build_field(config.data.f, grid, config.data.f_amplitude, rng)
    g = catalog.modulation(config.data.g, grid)

    trajectory = solve_forward(u0, f_star, g, params, config.T, config.nt, record=sampling_policy(config))
    phi = trajectory.final
    grad_psi = pressure_gradient(phi, f_star, g.value(config.T), params)
    problem = InverseProblem(u0, phi, grad_psi, g, params, config.T)

    report = check_admissibility(problem)
    if not report.admissible:
        logger.warning(f"Manufactured problem is not admissible ({report.condition} fails); kept anyway")
    logger.info(f"Manufactured problem: |f*|={np.sqrt(np.sum(f_star.values ** 2) * grid.cell_volume):.6g}, "
                f"T={config.T}, nt={config.nt}")
    return ManufacturedProblem(problem, f_star, trajectory, config.data.g, config.nt)


def write_problem(directory, manufactured):
    """Fields, problem description, trajectory and a manifest."""
    os.makedirs(directory, exist_ok=True)
    problem = manufactured.problem
    fields = (problem.u0, manufactured.f_star, problem.phi, problem.grad_psi)
    for name, field in zip(FIELD_FILES, fields):
        write_field(os.path.join(directory, name), field)

    params = problem.params
    description = {
        'd': params.d, 'n': problem.grid.n, 'L': repr(params.L), 'T': repr(problem.T),
        'nt': manufactured.nt, 'mu': repr(params.mu), 'alpha': repr(params.alpha),
        'beta': repr(params.beta), 'r': repr(params.r), 'g': manufactured.g_name,
    }
    with open(os.path.join(directory, PROBLEM_FILE), 'w', encoding='utf-8') as handle:
        for key, value in description.items():
            handle.write(f"{key}={value}\n")

    write_trajectory(os.path.join(directory, 'trajectory'), manufactured.trajectory, params.r)
    with open(os.path.join(directory, MANIFEST_FILE), 'w', encoding='utf-8') as handle:
        for name in FIELD_FILES + (PROBLEM_FILE, 'trajectory/'):
            handle.write(f"{name}\n")
    logger.info(f"Wrote manufactured problem to {directory}")


def load_problem(directory):
    """(InverseProblem, f_star or None, nt) from a problem directory."""
    description = dotenv_values(os.path.join(directory, PROBLEM_FILE))
    missing = [key for key in ('d', 'n', 'L', 'T', 'nt', 'mu', 'alpha', 'beta', 'r', 'g') if key not in description]
    if missing:
        raise ValueError(f"{directory}/{PROBLEM_FILE} lacks keys: {', '.join(missing)}")
    params = CbfParams(
        mu=float(description['mu']), alpha=float(description['alpha']), beta=float(description['beta']),
        r=float(description['r']), d=int(description['d']), L=float(description['L']),
    )
    u0 = read_field(os.path.join(directory, 'u0.cbff'), solenoidal=True)
    phi = read_field(os.path.join(directory, 'phi.cbff'), solenoidal=True)
    grad_psi = read_field(os.path.join(directory, 'grad_psi.cbff'))
    f_path = os.path.join(directory, 'f_star.cbff')
    f_star = read_field(f_path, solenoidal=True) if os.path.exists(f_path) else None
    g = catalog.modulation(description['g'], u0.grid)
    problem = InverseProblem(u0, phi, grad_psi, g, params, float(description['T']))
    return problem, f_star, int(description['nt'])
