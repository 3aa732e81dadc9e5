"""Benchmark sweeping control problems, with analytic solutions where they are known."""
import logging
from dataclasses import dataclass
from typing import Callable, Optional

import numpy as np

from .exceptions import UnknownProblemError
from .problem import ControlledVectorField, MixedConstraint, ProblemSpec, ScalarField, broadcast_pair

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Reference:
    """Known optimal process: state and control as maps of t (vectorized over t)."""
    state: Callable
    control: Callable
    objective: float
    contact: Optional[tuple] = None
    slack: Optional[Callable] = None


@dataclass(frozen=True)
class CatalogEntry:
    spec: ProblemSpec
    reference: Optional[Reference] = None

    @property
    def name(self):
        return self.spec.name


def quadratic_set(weights, level=1.0):
    """ψ(x) = Σ w_i x_i² − level."""
    weights = np.asarray(weights, dtype=float)
    return ScalarField(
        weights.size,
        value=lambda x: np.sum(weights * np.asarray(x, dtype=float) ** 2, axis=-1) - level,
        grad=lambda x: 2.0 * weights * np.asarray(x, dtype=float),
        hess=lambda x: np.broadcast_to(np.diag(2.0 * weights), np.shape(x)[:-1] + (weights.size, weights.size)).copy(),
    )


def linear_cost(coefficients):
    """g(x) = ⟨c, x⟩."""
    c = np.asarray(coefficients, dtype=float)
    return ScalarField(
        c.size,
        value=lambda x: np.asarray(x, dtype=float) @ c,
        grad=lambda x: np.broadcast_to(c, np.shape(x)).copy(),
        hess=lambda x: np.zeros(np.shape(x) + (c.size,)),
    )


def single_integrator(n):
    """f(x, u) = u."""
    def value(x, u):
        _, u = broadcast_pair(x, u)
        return u.copy()

    def jac_x(x, u):
        x, _ = broadcast_pair(x, u)
        return np.zeros(x.shape + (n,))

    def jac_u(x, u):
        x, _ = broadcast_pair(x, u)
        return np.broadcast_to(np.eye(n), x.shape[:-1] + (n, n)).copy()

    return ControlledVectorField(n, n, value, jac_x, jac_u)


def control_ball(radius):
    """h(x, u) = |u|² − radius²."""
    def value(x, u):
        _, u = broadcast_pair(x, u)
        return np.sum(u ** 2, axis=-1) - radius ** 2

    def grad_x(x, u):
        x, _ = broadcast_pair(x, u)
        return np.zeros(x.shape)

    def grad_u(x, u):
        _, u = broadcast_pair(x, u)
        return 2.0 * u

    return MixedConstraint(value, grad_x, grad_u)


def half_plane_coupling(bound):
    """h(x, u) = x_1 + u_1 − bound; couples state and control."""
    def value(x, u):
        x, u = broadcast_pair(x, u)
        return x[..., 0] + u[..., 0] - bound

    def grad_x(x, u):
        x, _ = broadcast_pair(x, u)
        out = np.zeros(x.shape)
        out[..., 0] = 1.0
        return out

    def grad_u(x, u):
        _, u = broadcast_pair(x, u)
        out = np.zeros(u.shape)
        out[..., 0] = 1.0
        return out

    return MixedConstraint(value, grad_x, grad_u)


def _disk_push():
    spec = ProblemSpec(
        name='disk-push',
        f=single_integrator(2),
        psi=quadratic_set([1.0, 1.0]),
        h=control_ball(2.0),
        g=linear_cost([-1.0, 0.0]),
        x0=np.zeros(2),
        rho=4.0,
        state_radius=2.0,
        control_radius=3.0,
    )
    reference = Reference(
        state=lambda t: np.stack([np.minimum(2.0 * np.asarray(t, dtype=float), 1.0), np.zeros(np.shape(t))], axis=-1),
        control=lambda t: np.broadcast_to([2.0, 0.0], np.shape(t) + (2,)).copy(),
        objective=-1.0,
        contact=(0.5, 1.0),
    )
    return CatalogEntry(spec, reference)


def _interval_1d():
    spec = ProblemSpec(
        name='interval-1d',
        f=single_integrator(1),
        psi=quadratic_set([1.0]),
        h=control_ball(1.0),
        g=linear_cost([-1.0]),
        x0=np.array([0.5]),
        rho=2.0,
        state_radius=2.0,
        control_radius=2.0,
    )
    # sliding on x = 1 needs 0 = u − ξψ'(1) = 1 − 2ξ
    reference = Reference(
        state=lambda t: np.minimum(0.5 + np.asarray(t, dtype=float), 1.0)[..., None],
        control=lambda t: np.ones(np.shape(t) + (1,)),
        objective=-1.0,
        contact=(0.5, 1.0),
        slack=lambda t: np.where(np.asarray(t, dtype=float) >= 0.5, 0.5, 0.0),
    )
    return CatalogEntry(spec, reference)


def _interior_classical():
    spec = ProblemSpec(
        name='interior-classical',
        f=single_integrator(2),
        psi=quadratic_set([1.0, 1.0], level=25.0),
        h=control_ball(1.0),
        g=linear_cost([-1.0, 0.0]),
        x0=np.zeros(2),
        rho=2.0,
        state_radius=6.0,
        control_radius=2.0,
    )
    reference = Reference(
        state=lambda t: np.stack([np.asarray(t, dtype=float), np.zeros(np.shape(t))], axis=-1),
        control=lambda t: np.broadcast_to([1.0, 0.0], np.shape(t) + (2,)).copy(),
        objective=-1.0,
        contact=None,
    )
    return CatalogEntry(spec, reference)


def _ellipse_steer():
    spec = ProblemSpec(
        name='ellipse-steer',
        f=single_integrator(2),
        psi=quadratic_set([0.25, 1.0]),
        h=half_plane_coupling(2.0),
        g=linear_cost([-1.0, -1.0]),
        x0=np.array([0.0, -0.5]),
        rho=4.0,
        state_radius=3.0,
        control_radius=3.0,
    )
    return CatalogEntry(spec)


_BUILDERS = {
    'disk-push': _disk_push,
    'interval-1d': _interval_1d,
    'interior-classical': _interior_classical,
    'ellipse-steer': _ellipse_steer,
}
_CACHE = {}


def list_catalog():
    return tuple(_BUILDERS)


def get(name):
    if name not in _BUILDERS:
        raise UnknownProblemError(name, list_catalog())
    if name not in _CACHE:
        _CACHE[name] = _BUILDERS[name]()
        logger.debug("Built catalog entry %s", name)
    return _CACHE[name]
