import logging
import math
import os

import numpy as np
from rest_framework.parsers import JSONParser
from rest_framework.renderers import JSONRenderer

from .conf import resolve

logger = logging.getLogger(__name__)


def fd_step(x, step=None):
    """Central-difference step, scaled by 1 + |x|."""
    return resolve(step, 'FD_STEP') * (1.0 + float(np.linalg.norm(x)))


def central_difference(fun, x, step=None):
    """Jacobian of ``fun`` at ``x`` by central differences.

    The result has shape ``fun(x).shape + x.shape``, so a scalar map gives a
    gradient and a vector map gives the usual rows-by-columns Jacobian.
    """
    x = np.asarray(x, dtype=float)
    h = fd_step(x, step)
    base = np.asarray(fun(x), dtype=float)
    jac = np.empty(base.shape + (x.size,))
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        jac[..., i] = (np.asarray(fun(x + e), dtype=float) - np.asarray(fun(x - e), dtype=float)) / (2.0 * h)
    return jac


def relative_error(analytic, approx):
    analytic = np.asarray(analytic, dtype=float)
    approx = np.asarray(approx, dtype=float)
    if analytic.size == 0:
        return 0.0
    return float(np.max(np.abs(analytic - approx)) / max(1.0, float(np.max(np.abs(approx)))))


def max_norm(a):
    a = np.asarray(a, dtype=float)
    return float(np.max(np.abs(a))) if a.size else 0.0


def to_jsonable(obj):
    """Convert numpy containers to plain lists; non-finite floats become None."""
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        value = float(obj)
        return value if math.isfinite(value) else None
    return obj


def write_json(path, data):
    content = JSONRenderer().render(to_jsonable(data), renderer_context={'indent': 2})
    with open(path, 'wb') as fh:
        fh.write(content)
        fh.write(b'\n')
    logger.info("Wrote %s", path)
    return path


def read_json(path):
    with open(path, 'rb') as fh:
        return JSONParser().parse(fh)


def ensure_dir(path):
    os.makedirs(path, exist_ok=True)
    return path
