"""
Run configuration for Oscilla
Loads a TOML run file over the defaults in config/settings.py and rejects unknown keys
"""
import copy
import logging
import os
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from typing import Any, Dict, Optional

from config import settings
from src.core_model import ModelParams, PhysicalParams, make_geometry, model_from_values, nondimensionalize
from src.errors import ValidationError

logger = logging.getLogger(__name__)


def _defaults() -> Dict[str, Dict[str, Any]]:
    d = settings.MODEL_DIMENSION
    return {
        'model': {
            'lambda': settings.MODEL_LAMBDA,
            'varpi': settings.MODEL_VARPI,
            'A': [1.0 if i == j else 0.0 for i in range(d) for j in range(d)],
            'dimension': d,
            'geometry': {'kind': settings.MODEL_GEOMETRY_KIND,
                         'params': {'diameter': settings.MODEL_GEOMETRY_DIAMETER}},
            'fixed_body': settings.MODEL_FIXED_BODY,
        },
        'physical': {},
        'mesh': {
            'R_trunc': settings.MESH_R_TRUNC,
            'resolution': settings.MESH_RESOLUTION,
            'wake_angle_deg': settings.MESH_WAKE_ANGLE_DEG,
            'grading': settings.MESH_GRADING,
            'outflow_angle_deg': settings.MESH_OUTFLOW_ANGLE_DEG,
        },
        'steady': {
            'tol_newton': settings.STEADY_TOL_NEWTON,
            'max_iter': settings.STEADY_MAX_ITER,
            'min_step': settings.STEADY_MIN_STEP,
            'lambda': [],
        },
        'spectral': {
            'zeta_min': settings.SPECTRAL_ZETA_MIN,
            'zeta_max': settings.SPECTRAL_ZETA_MAX,
            'n_shifts': settings.SPECTRAL_N_SHIFTS,
            'n_eigs': settings.SPECTRAL_N_EIGS,
            're_strip': settings.SPECTRAL_RE_STRIP,
            'residual_tol': settings.SPECTRAL_RESIDUAL_TOL,
            'kmax': settings.SPECTRAL_KMAX,
            'tol_simplicity': settings.SPECTRAL_TOL_SIMPLICITY,
            'tol_resonance': settings.SPECTRAL_TOL_RESONANCE,
            'method': 'auto',
            'lambda_range': [],
        },
        'modes': {
            'kmax': settings.MODES_KMAX,
            'zeta': None,
            'lambda': None,
            'varpi_grid': list(settings.MODES_VARPI_GRID),
            'resonance_k': settings.MODES_RESONANCE_K,
        },
        'branch': {
            'kmax': settings.BRANCH_KMAX,
            'epsilon_max': settings.BRANCH_EPSILON_MAX,
            'points': settings.BRANCH_POINTS,
            'tol': settings.BRANCH_TOL,
            'max_iter': settings.BRANCH_MAX_ITER,
            'mu_mode': settings.BRANCH_MU_MODE,
            'noise_floor': settings.BRANCH_NOISE_FLOOR,
        },
        'simulate': {
            'lambda': None,
            't_final': settings.SIMULATE_T_FINAL,
            'dt': settings.SIMULATE_DT,
            'epsilon': settings.SIMULATE_EPSILON,
            'stride': settings.SIMULATE_STRIDE,
            'blowup': settings.SIMULATE_BLOWUP,
        },
        'run': {
            'output_dir': settings.OUTPUT_DIR,
            'seed': settings.RUN_SEED,
            'jobs': settings.RUN_JOBS,
        },
    }


PHYSICAL_KEYS = ('body_mass', 'fluid_density', 'kinematic_viscosity', 'length_scale', 'freestream_speed', 'stiffness')


def _merge(defaults: Dict, given: Dict, where: str) -> Dict:
    out = copy.deepcopy(defaults)
    for key, value in given.items():
        name = f'{where}.{key}' if where else key
        if key not in defaults:
            raise ValidationError(f"unknown config key '{name}'")
        if isinstance(defaults[key], dict) and key != 'params':
            if not isinstance(value, dict):
                raise ValidationError(f"config key '{name}' must be a table")
            out[key] = _merge(defaults[key], value, name)
        else:
            out[key] = value
    return out


class RunConfig:
    """Effective configuration: defaults with the run file applied"""

    def __init__(self, values: Optional[Dict] = None, source: Optional[str] = None):
        values = values or {}
        self.source = source
        defaults = _defaults()
        physical = values.get('physical', {})
        for key in physical:
            if key not in PHYSICAL_KEYS:
                raise ValidationError(f"unknown config key 'physical.{key}'")
        self.sections = _merge(defaults, {k: v for k, v in values.items() if k != 'physical'}, '')
        self.sections['physical'] = dict(physical)
        if 'A' not in values.get('model', {}):
            d = int(self.sections['model']['dimension'])
            self.sections['model']['A'] = [1.0 if i == j else 0.0 for i in range(d) for j in range(d)]
        self._check_types()

    def _check_types(self):
        b = self.sections['branch']
        if b['mu_mode'] not in ('linear', 'resolve'):
            raise ValidationError(f"config key 'branch.mu_mode' must be 'linear' or 'resolve' (got {b['mu_mode']!r})")
        for where, key in (('branch', 'kmax'), ('branch', 'points'), ('modes', 'kmax'), ('spectral', 'kmax'),
                           ('mesh', 'resolution'), ('run', 'jobs'), ('run', 'seed'), ('simulate', 'stride')):
            value = self.sections[where][key]
            if isinstance(value, bool) or not isinstance(value, int):
                raise ValidationError(f"config key '{where}.{key}' must be an integer")
        if self.sections['run']['jobs'] < 1:
            raise ValidationError("config key 'run.jobs' must be at least 1")
        for key in ('tol_simplicity', 'tol_resonance'):
            value = self.sections['spectral'][key]
            if isinstance(value, bool) or not isinstance(value, (int, float)) or value < 0:
                raise ValidationError(f"config key 'spectral.{key}' must be a non-negative number")
        if self.sections['spectral']['method'] not in ('auto', 'dense', 'shift-invert'):
            raise ValidationError("config key 'spectral.method' must be auto, dense or shift-invert")

    def __getitem__(self, section: str) -> Dict:
        return self.sections[section]

    @property
    def output_dir(self) -> str:
        return self.sections['run']['output_dir']

    @property
    def seed(self) -> int:
        return int(self.sections['run']['seed'])

    @property
    def jobs(self) -> int:
        return int(self.sections['run']['jobs'])

    def set(self, section: str, key: str, value):
        """Command-line override of one key"""
        if key not in self.sections[section]:
            raise ValidationError(f"unknown config key '{section}.{key}'")
        if value is not None:
            self.sections[section][key] = value

    def model(self) -> ModelParams:
        """ModelParams from [model], or from [physical] when present"""
        m = self.sections['model']
        geometry = m['geometry']
        if self.sections['physical']:
            p = self.sections['physical']
            missing = [k for k in PHYSICAL_KEYS if k not in p]
            if missing:
                raise ValidationError(f"config section 'physical' lacks {', '.join(missing)}")
            physical = PhysicalParams(**{k: p[k] for k in PHYSICAL_KEYS[:-1]}, stiffness=p['stiffness'])
            params = nondimensionalize(physical, int(m['dimension']),
                                       make_geometry(geometry['kind'], geometry.get('params')))
            if m['fixed_body']:
                params = ModelParams(params.lam, params.varpi, params.A, params.dimension, params.geometry, True)
            return params
        return model_from_values(m['lambda'], m['varpi'], m['A'], m['dimension'],
                                 geometry['kind'], geometry.get('params'), m['fixed_body'])

    def effective(self) -> Dict:
        return copy.deepcopy(self.sections)


def load_config(path: Optional[str] = None) -> RunConfig:
    """Parse a TOML run file; None gives the defaults"""
    if path is None:
        return RunConfig()
    if not os.path.exists(path):
        raise ValidationError(f"config file not found: {path}")
    try:
        with open(path, 'rb') as f:
            values = tomllib.load(f)
    except tomllib.TOMLDecodeError as exc:
        raise ValidationError(f"malformed config {path}: {exc}") from exc
    logger.info("Loaded run configuration from %s", path)
    return RunConfig(values, source=path)


def resolve_jobs(cli_jobs: Optional[int], config: RunConfig) -> int:
    """OSCILLA_JOBS beats --jobs, which beats [run] jobs"""
    env = os.environ.get(settings.JOBS_ENV_VAR)
    if env:
        try:
            jobs = int(env)
        except ValueError as exc:
            raise ValidationError(f"{settings.JOBS_ENV_VAR} must be an integer (got {env!r})") from exc
    elif cli_jobs is not None:
        jobs = int(cli_jobs)
    else:
        jobs = config.jobs
    if jobs < 1:
        raise ValidationError("jobs must be at least 1")
    return jobs
