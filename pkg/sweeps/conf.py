"""Numerical defaults, overridable through ``settings.SWEEPS``."""
from django.conf import settings

DEFAULTS = {
    'OUTPUT_ROOT': 'runs',
    'FEAS_TOL': 1e-9,
    'PROJECTION_TOL': 1e-12,
    'PROJECTION_MAX_ITER': 100,
    'FD_STEP': 1e-5,
    'SUBSTEPS': 10,
    'SOLVER_TOL': 1e-8,
    'SOLVER_MAX_OUTER': 50,
    'SOLVER_MAX_INNER': 500,
    'SOLVER_PENALTY0': 10.0,
    'EPSILON_SCHEDULE': [1e-2, 1e-3, 1e-4, 1e-5, 1e-6],
    'SAMPLE_BUDGET': 1000,
    'MAXIMUM_DRAWS': 200,
    'MAXIMUM_ASCENT_STEPS': 20,
    'SPIKE_FACTOR': 10.0,
    'TOLERANCES': {
        'adjoint': 1e-4,
        'boundary': 1e-6,
        'condition5': 1e-4,
        'stationarity': 1e-3,
        'complementarity': 1e-3,
        'transversality': 1e-8,
        'nontriviality': 0.1,
        'support': 1e-8,
        'active': 1e-6,
    },
}


def sweep_setting(name):
    if name not in DEFAULTS:
        raise KeyError(f"Unknown sweeps setting: {name}")
    user = getattr(settings, 'SWEEPS', {}) if settings.configured else {}
    value = user.get(name, DEFAULTS[name])
    if isinstance(DEFAULTS[name], dict):
        # partial overrides of nested dicts keep the remaining defaults
        return {**DEFAULTS[name], **value}
    return value


def resolve(value, name):
    """Return ``value`` unless it is None, then the configured default."""
    return sweep_setting(name) if value is None else value
