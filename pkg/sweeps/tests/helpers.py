import json
import os
import shutil
import tempfile

import numpy as np

from sweeps.problem import MixedConstraint, RunningCost, broadcast_pair
from sweeps.transcription import NlpProblem


class TempDirMixin:
    def setUp(self):
        super().setUp()
        self.tmp = tempfile.mkdtemp(prefix='sweeps-test-')
        self.addCleanup(shutil.rmtree, self.tmp, ignore_errors=True)

    def path(self, *parts):
        return os.path.join(self.tmp, *parts)

    def write_config(self, name='config.json', **config):
        path = self.path(name)
        with open(path, 'w') as fh:
            json.dump(config, fh)
        return path


def dense_nlp(n_vars, objective, gradient, eq=None, eq_jac=None, ineq=None, ineq_jac=None,
              n_eq=0, n_ineq=0, lb=None, ub=None, name='hand'):
    return NlpProblem(n_vars, objective, gradient, eq, eq_jac, ineq, ineq_jac,
                      n_eq=n_eq, n_ineq=n_ineq, lb=lb, ub=ub, name=name)


def projection_onto_line():
    """min (z1−1)² + (z2−2)² s.t. z1 + z2 = 1; z* = (0, 1), μ = 2."""
    return dense_nlp(
        2,
        lambda z: (z[0] - 1.0) ** 2 + (z[1] - 2.0) ** 2,
        lambda z: np.array([2.0 * (z[0] - 1.0), 2.0 * (z[1] - 2.0)]),
        eq=lambda z: np.array([z[0] + z[1] - 1.0]),
        eq_jac=lambda z: np.array([[1.0, 1.0]]),
        n_eq=1,
        name='line',
    )


def bounded_below():
    """min z² s.t. 1 − z ≤ 0; z* = 1, μ = 2."""
    return dense_nlp(
        1,
        lambda z: z[0] ** 2,
        lambda z: np.array([2.0 * z[0]]),
        ineq=lambda z: np.array([1.0 - z[0]]),
        ineq_jac=lambda z: np.array([[-1.0]]),
        n_ineq=1,
        name='halfline',
    )


def linear_over_disk():
    """min z1 + z2 s.t. z1² + z2² ≤ 2; z* = (−1, −1), μ = 1/2."""
    return dense_nlp(
        2,
        lambda z: z[0] + z[1],
        lambda z: np.array([1.0, 1.0]),
        ineq=lambda z: np.array([z @ z - 2.0]),
        ineq_jac=lambda z: 2.0 * z[None, :],
        n_ineq=1,
        name='disk',
    )


def rosenbrock():
    return dense_nlp(
        2,
        lambda z: 100.0 * (z[1] - z[0] ** 2) ** 2 + (1.0 - z[0]) ** 2,
        lambda z: np.array([
            -400.0 * z[0] * (z[1] - z[0] ** 2) - 2.0 * (1.0 - z[0]),
            200.0 * (z[1] - z[0] ** 2),
        ]),
        name='rosenbrock',
    )


def tracking_cost(target):
    """L(t, x, u) = ½|u − target|²."""
    target = np.asarray(target, dtype=float)

    def value(t, x, u):
        _, u = broadcast_pair(x, u)
        return 0.5 * np.sum((u - target) ** 2, axis=-1)

    def grad_x(t, x, u):
        x, _ = broadcast_pair(x, u)
        return np.zeros(x.shape)

    def grad_u(t, x, u):
        _, u = broadcast_pair(x, u)
        return u - target

    return RunningCost(value, grad_x, grad_u)


def squared_control():
    """h(x, u) = u², admissible only at u = 0 where ∇_u h vanishes."""
    def value(x, u):
        _, u = broadcast_pair(x, u)
        return np.sum(u ** 2, axis=-1)

    def grad_x(x, u):
        x, _ = broadcast_pair(x, u)
        return np.zeros(x.shape)

    def grad_u(x, u):
        _, u = broadcast_pair(x, u)
        return 2.0 * u

    return MixedConstraint(value, grad_x, grad_u)
