"""Flat `key = value` run configuration with full validation."""
import io
import logging
import os
import re
from dataclasses import dataclass, field
from math import pi
from typing import Optional

from dotenv.parser import parse_stream

from cbf.catalog import MODULATION_NAMES, vector_names
from cbf.errors import ConfigError
from cbf.forward import CbfParams
from cbf.inverse import PAPER_M, UNBOUNDED, USER, FixedPointConfig
from cbf.spectral import make_grid
from cbf.stability import TARGETS, PerturbationSpec

logger = logging.getLogger(__name__)

MODES = ('forward', 'inverse', 'verify', 'sweep', 'manufacture')
DEFAULT_SEED = 20240501

_PI_VALUE = re.compile(r'^\s*([0-9.eE+-]*)\s*\*?\s*pi\s*$')


def _parse_float(text):
    match = _PI_VALUE.match(text)
    if match:
        factor = match.group(1)
        return (float(factor) if factor else 1.0) * pi
    return float(text)


def _parse_int(text):
    value = float(text)
    if value != int(value):
        raise ValueError(f"not an integer: {text}")
    return int(value)


def _parse_bool(text):
    lowered = text.strip().lower()
    if lowered in ('1', 'true', 'yes', 'on'):
        return True
    if lowered in ('0', 'false', 'no', 'off'):
        return False
    raise ValueError(f"not a boolean: {text}")


def _parse_radius(text):
    lowered = text.strip()
    if lowered in (PAPER_M, UNBOUNDED):
        return lowered
    return _parse_float(lowered)


# key -> (parser, default)
KEYS = {
    'mode': (str, None),
    'seed': (_parse_int, DEFAULT_SEED),
    'params.mu': (_parse_float, 1.0),
    'params.alpha': (_parse_float, 2.0),
    'params.beta': (_parse_float, 1.0),
    'params.r': (_parse_float, 3.0),
    'grid.d': (_parse_int, 2),
    'grid.n': (_parse_int, 32),
    'grid.L': (_parse_float, 2 * pi),
    'time.T': (_parse_float, 1.0),
    'time.nt': (_parse_int, 1000),
    'time.record_every': (_parse_int, 0),
    'data.u0': (str, 'zero'),
    'data.u0_amplitude': (_parse_float, 1.0),
    'data.f': (str, 'tg1'),
    'data.f_amplitude': (_parse_float, 1.0),
    'data.g': (str, 'one'),
    'data.problem': (str, ''),
    'data.trajectory': (str, ''),
    'solver.max_iters': (_parse_int, 200),
    'solver.rel_tol': (_parse_float, 1e-8),
    'solver.relaxation': (_parse_float, 1.0),
    'solver.ball_radius': (_parse_radius, PAPER_M),
    'solver.project_output': (_parse_bool, False),
    'verify.tol_rel': (_parse_float, 1e-2),
    'verify.c_max': (_parse_float, 100.0),
    'verify.trials': (_parse_int, 5),
    'sweep.target': (str, ''),
    'sweep.shape': (str, 'random'),
    'sweep.delta0': (_parse_float, 1e-1),
    'sweep.rungs': (_parse_int, 5),
    'sweep.ratio': (_parse_float, 0.5),
    'sweep.include_zero': (_parse_bool, False),
    'output.dir': (str, 'out'),
}


@dataclass
class DataSources:
    u0: str = 'zero'
    u0_amplitude: float = 1.0
    f: str = 'tg1'
    f_amplitude: float = 1.0
    g: str = 'one'
    problem: str = ''
    trajectory: str = ''


@dataclass
class RunConfig:
    mode: str
    params: CbfParams
    n: int
    T: float
    nt: int
    record_every: int
    data: DataSources
    solver: FixedPointConfig
    sweep: Optional[PerturbationSpec]
    tol_rel: float
    c_max: float
    trials: int
    output_dir: str
    seed: int
    values: dict = field(default_factory=dict)
    source: str = ''

    @property
    def d(self):
        return self.params.d

    @property
    def L(self):
        return self.params.L

    def grid(self):
        return make_grid(self.params.d, self.n, self.params.L)

    def resolved_lines(self):
        """Every key with its resolved value, in registry order."""
        return [f"{key} = {self.values[key]}" for key in KEYS]

    def with_overrides(self, output_dir=None, seed=None):
        if output_dir:
            self.output_dir = output_dir
            self.values['output.dir'] = output_dir
        if seed is not None:
            self.seed = int(seed)
            self.values['seed'] = int(seed)
            if self.sweep is not None:
                self.sweep.seed = int(seed)
        return self


def _is_snapshot_path(value):
    return value.endswith('.cbff')


def load_config(path, mode=None):
    """Parse and validate a run configuration, collecting every violation.

    A `mode` given here takes precedence over the file's `mode` key.
    """
    if not os.path.exists(path):
        raise ConfigError([f"config file not found: {path}"])
    with open(path, encoding='utf-8') as handle:
        text = handle.read()
    return parse_config(text, source=path, base_dir=os.path.dirname(os.path.abspath(path)), mode=mode)


def parse_config(text, source='<string>', base_dir='.', mode=None):
    errors = []
    values, lines = {}, {}
    line_number = 1
    for binding in parse_stream(io.StringIO(text)):
        raw = binding.original.string
        leading = len(raw) - len(raw.lstrip())
        where = 'line ' + str(line_number + raw[:leading].count('\n'))
        line_number += raw.count('\n')
        if binding.error:
            errors.append(f"{where}: cannot parse '{binding.original.string.strip()}'")
            continue
        if binding.key is None:
            continue
        key = binding.key
        if key not in KEYS:
            errors.append(f"{where}: unknown key '{key}'")
            continue
        if binding.value is None:
            errors.append(f"{where}: key '{key}' has no value")
            continue
        parser, _ = KEYS[key]
        try:
            values[key] = parser(binding.value)
        except ValueError as e:
            errors.append(f"{where}: bad value for '{key}': {e}")
            continue
        lines[key] = where

    def at(key):
        return f"{lines[key]}: " if key in lines else ''

    for key, (_, default) in KEYS.items():
        values.setdefault(key, default)

    if mode is not None:
        if values['mode'] not in (None, mode):
            logger.info(f"Mode '{mode}' overrides '{values['mode']}' from {source}")
        values['mode'] = mode
    mode = values['mode']
    if mode is None:
        errors.append("missing required key 'mode'")
    elif mode not in MODES:
        errors.append(f"{at('mode')}mode must be one of {MODES}, got '{mode}'")

    d, r = values['grid.d'], values['params.r']
    if d == 3 and r < 3:
        errors.append(f"{at('params.r')}r >= 3 required for d = 3 (got r = {r:g})")
    for key in ('params.mu', 'params.alpha', 'params.beta', 'grid.L', 'time.T'):
        if not values[key] > 0:
            errors.append(f"{at(key)}{key} must be positive, got {values[key]}")
    if r < 1:
        errors.append(f"{at('params.r')}params.r must be at least 1, got {r:g}")
    if d not in (2, 3):
        errors.append(f"{at('grid.d')}grid.d must be 2 or 3, got {d}")
    n = values['grid.n']
    if n % 2 or n < 8:
        errors.append(f"{at('grid.n')}grid.n must be even and at least 8, got {n}")
    if values['time.nt'] < 1:
        errors.append(f"{at('time.nt')}time.nt must be positive, got {values['time.nt']}")

    for key in ('data.u0', 'data.f'):
        name = values[key]
        if _is_snapshot_path(name):
            resolved = os.path.join(base_dir, name)
            if not os.path.exists(resolved):
                errors.append(f"{at(key)}{key} file not found: {name}")
            values[key] = resolved
        elif name not in vector_names():
            errors.append(f"{at(key)}{key} names unknown field '{name}'")
    if values['data.g'] not in MODULATION_NAMES:
        errors.append(f"{at('data.g')}data.g names unknown modulation '{values['data.g']}'")
    for key in ('data.problem', 'data.trajectory'):
        if values[key]:
            resolved = os.path.join(base_dir, values[key])
            if not os.path.isdir(resolved):
                errors.append(f"{at(key)}{key} directory not found: {values[key]}")
            values[key] = resolved

    radius = values['solver.ball_radius']
    solver = FixedPointConfig(
        max_iters=values['solver.max_iters'],
        rel_tol=values['solver.rel_tol'],
        relaxation=values['solver.relaxation'],
        ball_radius_mode=radius if isinstance(radius, str) else USER,
        ball_radius=None if isinstance(radius, str) else radius,
        nt=values['time.nt'],
        project_output=values['solver.project_output'],
    )
    errors.extend(f"solver: {problem}" for problem in solver.violations())

    sweep = None
    if mode == 'sweep':
        if not values['sweep.target']:
            errors.append("mode 'sweep' requires 'sweep.target'")
        else:
            sweep = PerturbationSpec(
                target=values['sweep.target'], shape=values['sweep.shape'], delta0=values['sweep.delta0'],
                rungs=values['sweep.rungs'], ratio=values['sweep.ratio'], seed=values['seed'],
                include_zero=values['sweep.include_zero'],
            )
            errors.extend(f"sweep: {problem}" for problem in sweep.violations())
    elif values['sweep.target'] and values['sweep.target'] not in TARGETS:
        errors.append(f"{at('sweep.target')}unknown sweep target '{values['sweep.target']}'")

    if errors:
        for error in errors:
            logger.error(f"Config {source}: {error}")
        raise ConfigError(errors)

    params = CbfParams(mu=values['params.mu'], alpha=values['params.alpha'], beta=values['params.beta'],
                       r=values['params.r'], d=d, L=values['grid.L'])
    config = RunConfig(
        mode=mode,
        params=params,
        n=n,
        T=values['time.T'],
        nt=values['time.nt'],
        record_every=values['time.record_every'],
        data=DataSources(
            u0=values['data.u0'], u0_amplitude=values['data.u0_amplitude'],
            f=values['data.f'], f_amplitude=values['data.f_amplitude'], g=values['data.g'],
            problem=values['data.problem'], trajectory=values['data.trajectory'],
        ),
        solver=solver,
        sweep=sweep,
        tol_rel=values['verify.tol_rel'],
        c_max=values['verify.c_max'],
        trials=values['verify.trials'],
        output_dir=values['output.dir'],
        seed=values['seed'],
        values=values,
        source=source,
    )
    logger.info(f"Loaded {mode} config from {source}: d={d}, n={n}, r={params.r:g}")
    return config
