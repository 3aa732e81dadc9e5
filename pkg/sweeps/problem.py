"""Problem data of a controlled sweeping process and its runtime validators.

Every callable accepts leading batch axes: a state argument has shape
``(..., n)`` and a control argument ``(..., m)``. Scalar fields return
``(...)``, gradients ``(..., d)`` and Hessians or Jacobians ``(..., a, b)``.
"""
import logging
import time
from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np
from scipy.optimize import brentq

from .conf import resolve
from .exceptions import (
    DegenerateGradientError,
    DimensionMismatchError,
    NonFiniteValueError,
    ProblemDefinitionError,
)
from .utils import central_difference, relative_error

logger = logging.getLogger(__name__)


def broadcast_pair(x, u):
    """Broadcast the leading axes of a state and a control array against each other."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    lead = np.broadcast_shapes(x.shape[:-1], u.shape[:-1])
    return np.broadcast_to(x, lead + x.shape[-1:]), np.broadcast_to(u, lead + u.shape[-1:])


@dataclass(frozen=True)
class ScalarField:
    dimension: int
    value: Callable
    grad: Callable
    hess: Optional[Callable] = None

    def __call__(self, x):
        return self.value(x)


@dataclass(frozen=True)
class ControlledVectorField:
    state_dim: int
    control_dim: int
    value: Callable
    jac_x: Callable
    jac_u: Callable

    def __call__(self, x, u):
        return self.value(x, u)


@dataclass(frozen=True)
class MixedConstraint:
    value: Callable
    grad_x: Callable
    grad_u: Callable

    def __call__(self, x, u):
        return self.value(x, u)


@dataclass(frozen=True)
class RunningCost:
    """L(t, x, u); time is the first argument and broadcasts like the batch axes."""
    value: Callable
    grad_x: Callable
    grad_u: Callable

    def __call__(self, t, x, u):
        return self.value(t, x, u)


@dataclass(frozen=True)
class ProblemSpec:
    """Data of min g(x(1)) [+ ∫L] over x' ∈ f(x,u) − N_C(x), h(x,u) ≤ 0, x(0) ∈ C0.

    C = {ψ ≤ 0}. C0 = {c0_i ≤ 0 for all i}; an empty ``c0`` means C0 = {x0}.
    ``state_radius`` and ``control_radius`` bound the sampling boxes used by
    the validators.
    """
    name: str
    f: ControlledVectorField
    psi: ScalarField
    h: MixedConstraint
    g: ScalarField
    x0: np.ndarray
    rho: float
    L: Optional[RunningCost] = None
    c0: tuple = ()
    state_radius: float = 2.0
    control_radius: float = 2.0

    def __post_init__(self):
        x0 = np.array(self.x0, dtype=float).reshape(-1)
        x0.setflags(write=False)
        object.__setattr__(self, 'x0', x0)
        object.__setattr__(self, 'c0', tuple(self.c0))
        n = self.f.state_dim
        if self.psi.dimension != n or self.g.dimension != n or x0.size != n:
            raise DimensionMismatchError(
                f"{self.name}: f has n={n}, psi has {self.psi.dimension}, g has {self.g.dimension}, x0 has {x0.size}"
            )
        if any(c.dimension != n for c in self.c0):
            raise DimensionMismatchError(f"{self.name}: every c0 constraint must act on R^{n}")
        if self.psi.hess is None:
            raise ProblemDefinitionError(f"{self.name}: psi needs an analytic Hessian")
        if not self.rho > 0:
            raise ProblemDefinitionError(f"{self.name}: truncation radius rho must be positive, got {self.rho}")
        if not float(self.psi.value(np.zeros(n))) < 0.0:
            raise ProblemDefinitionError(f"{self.name}: 0 must lie in the interior of C (psi(0) < 0)")
        if self.c0 and max(float(c.value(x0)) for c in self.c0) > 1e-12:
            raise ProblemDefinitionError(f"{self.name}: anchor x0 must satisfy the C0 constraints")
        if float(self.psi.value(x0)) > 1e-12:
            raise ProblemDefinitionError(f"{self.name}: x0 must lie in C")

    @property
    def n(self):
        return self.f.state_dim

    @property
    def m(self):
        return self.f.control_dim

    @property
    def singleton_start(self):
        return not self.c0

    def replace(self, **changes):
        return replace(self, **changes)


@dataclass(frozen=True)
class NormalRay:
    """Classification of a point against C with the generator of N_C(x)."""
    kind: str
    generator: Optional[np.ndarray] = None

    @property
    def is_boundary(self):
        return self.kind == 'boundary'


def normal_ray(problem, x, tol=1e-9):
    if not tol > 0:
        raise ValueError("tol must be positive")
    x = np.asarray(x, dtype=float)
    value = float(problem.psi.value(x))
    if value < -tol:
        return NormalRay('interior')
    if value > tol:
        return NormalRay('outside')
    gradient = np.asarray(problem.psi.grad(x), dtype=float)
    if np.linalg.norm(gradient) < 1e-10:
        raise DegenerateGradientError(f"grad psi vanishes on the boundary of C at {x.tolist()}", point=x)
    return NormalRay('boundary', gradient)


@dataclass(frozen=True)
class Violation:
    assumption: str
    witness: tuple
    detail: str = ''

    def to_dict(self):
        return {'assumption': self.assumption, 'witness': list(self.witness), 'detail': self.detail}


@dataclass(frozen=True)
class AssumptionReport:
    M_est: float
    eta_est: float
    convexity_ok: bool
    coercivity_ok: bool
    h_bounded_ok: bool
    c0_subset_ok: bool
    g_lipschitz_est: float
    violations: tuple = ()
    unverified: tuple = ('H2',)

    @property
    def clean(self):
        return not self.violations

    def to_dict(self):
        return {
            'M_est': self.M_est,
            'eta_est': self.eta_est,
            'convexity_ok': self.convexity_ok,
            'coercivity_ok': self.coercivity_ok,
            'h_bounded_ok': self.h_bounded_ok,
            'c0_subset_ok': self.c0_subset_ok,
            'g_lipschitz_est': self.g_lipschitz_est,
            'violations': [v.to_dict() for v in self.violations],
            'unverified': list(self.unverified),
        }


def gamma_lower_bound(report):
    """Smallest admissible penalty parameter, 2M/η."""
    if not report.eta_est > 0:
        return np.inf
    return 2.0 * report.M_est / report.eta_est


def _witness(point):
    return tuple(float(v) for v in np.ravel(point))


def _boundary_radius(psi, direction, r_max=1e6):
    """Root of r -> psi(r d) on (0, r_hi); None when psi stays non-positive up to r_max."""
    r_hi = 1.0
    while float(psi.value(r_hi * direction)) <= 0.0:
        r_hi *= 2.0
        if r_hi > r_max:
            return None
    return brentq(lambda r: float(psi.value(r * direction)), 0.0, r_hi, xtol=1e-14, rtol=1e-14)


def check_assumptions(problem, sample_budget=None, seed=0):
    """Sampled validation of the standing hypotheses; violations are reported, never raised."""
    budget = resolve(sample_budget, 'SAMPLE_BUDGET')
    if budget < 100:
        raise ValueError("sample_budget must be at least 100")
    start_time = time.time()
    rng = np.random.default_rng(seed)
    n, m = problem.n, problem.m
    R, B = problem.state_radius, problem.control_radius
    violations = []

    # H1: bounded velocities on admissible pairs
    X = rng.uniform(-R, R, size=(budget, n))
    U = rng.uniform(-B, B, size=(budget, m))
    with np.errstate(all='ignore'):
        hv = problem.h.value(X, U)
        F = problem.f.value(X, U)
        DF = problem.f.jac_x(X, U)
    admissible = np.isfinite(hv) & (hv <= 0.0)
    if not admissible.any():
        violations.append(Violation('H1', _witness(X[0]), 'no admissible control sampled'))
        M_est = 0.0
    else:
        Fa, DFa = F[admissible], DF[admissible]
        finite = np.all(np.isfinite(Fa), axis=1) & np.all(np.isfinite(DFa), axis=(1, 2))
        if not finite.all():
            bad = np.flatnonzero(~finite)[0]
            violations.append(Violation('H1', _witness(X[admissible][bad]), 'non-finite velocity'))
        M_est = float(max(
            np.max(np.linalg.norm(Fa[finite], axis=1), initial=0.0),
            np.max(np.linalg.norm(DFa[finite], ord=2, axis=(1, 2)), initial=0.0),
        ))

    # H3: convexity of psi
    eigs = np.linalg.eigvalsh(problem.psi.hess(X))
    floor = -1e-9 * (1.0 + np.max(np.abs(eigs), axis=1))
    nonconvex = np.flatnonzero(eigs[:, 0] < floor)
    convexity_ok = nonconvex.size == 0
    if not convexity_ok:
        violations.append(Violation('H3', _witness(X[nonconvex[0]]), 'psi Hessian not positive semidefinite'))

    # H3: boundary gradients and coercivity along random rays
    directions = rng.normal(size=(max(16, budget // 10), n))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    far = 1e3 * (1.0 + R)
    coercivity_ok = True
    boundary = []
    for d in directions:
        radius = _boundary_radius(problem.psi, d)
        if radius is None:
            coercivity_ok = False
            violations.append(Violation('H3', _witness(far * d), 'psi not coercive along this ray'))
            continue
        boundary.append(radius * d)
        if not float(problem.psi.value(far * d)) > float(problem.psi.value(0.5 * far * d)):
            coercivity_ok = False
            violations.append(Violation('H3', _witness(far * d), 'psi not increasing far along this ray'))
    eta_est = 0.0
    if boundary:
        grad_norms = np.linalg.norm(problem.psi.grad(np.array(boundary)), axis=1)
        eta_est = 0.5 * float(np.min(grad_norms))
        if eta_est < 0.5e-10:
            violations.append(
                Violation('H3', _witness(boundary[int(np.argmin(grad_norms))]), 'grad psi vanishes on the boundary')
            )

    # H4: h and its gradients finite on the sampling box
    with np.errstate(all='ignore'):
        hx = problem.h.grad_x(X, U)
        hu = problem.h.grad_u(X, U)
    finite_h = np.isfinite(hv) & np.all(np.isfinite(hx), axis=1) & np.all(np.isfinite(hu), axis=1)
    h_bounded_ok = bool(finite_h.all())
    if not h_bounded_ok:
        violations.append(Violation('H4', _witness(X[np.flatnonzero(~finite_h)[0]]), 'non-finite mixed constraint'))

    # H5: C0 inside C
    feas_tol = resolve(None, 'FEAS_TOL')
    if problem.singleton_start:
        c0_points = problem.x0[None, :]
    else:
        cands = problem.x0 + rng.uniform(-R, R, size=(budget, n))
        inside = np.all([c.value(cands) <= 0.0 for c in problem.c0], axis=0)
        c0_points = np.vstack([problem.x0[None, :], cands[inside]])
    psi_c0 = problem.psi.value(c0_points)
    outside = np.flatnonzero(psi_c0 > feas_tol)
    c0_subset_ok = outside.size == 0
    if not c0_subset_ok:
        violations.append(Violation('H5', _witness(c0_points[outside[0]]), 'point of C0 outside C'))

    # H6: Lipschitz estimate of g
    with np.errstate(all='ignore'):
        gg = np.linalg.norm(problem.g.grad(X), axis=1)
    if not np.all(np.isfinite(gg)):
        violations.append(Violation('H6', _witness(X[np.flatnonzero(~np.isfinite(gg))[0]]), 'non-finite grad g'))
        g_lipschitz = np.inf
    else:
        g_lipschitz = float(np.max(gg))

    report = AssumptionReport(
        M_est=M_est,
        eta_est=eta_est,
        convexity_ok=convexity_ok,
        coercivity_ok=coercivity_ok,
        h_bounded_ok=h_bounded_ok,
        c0_subset_ok=c0_subset_ok,
        g_lipschitz_est=g_lipschitz,
        violations=tuple(violations),
    )
    logger.info(
        "Assumption check for %s completed in %.2f seconds (M=%.4g, eta=%.4g, %d violations)",
        problem.name, time.time() - start_time, M_est, eta_est, len(violations),
    )
    return report


def gradient_check(problem, n_points=100, seed=0, step=None):
    """Worst relative error between analytic and central-difference derivatives, per field."""
    if n_points < 1:
        raise ValueError("n_points must be at least 1")
    rng = np.random.default_rng(seed)
    n, m = problem.n, problem.m
    X = rng.uniform(-problem.state_radius, problem.state_radius, size=(n_points, n))
    U = rng.uniform(-problem.control_radius, problem.control_radius, size=(n_points, m))
    T = rng.uniform(0.0, 1.0, size=n_points)

    errors = {}

    def record(name, analytic, fun, point):
        analytic = np.asarray(analytic, dtype=float)
        if not np.all(np.isfinite(analytic)):
            raise NonFiniteValueError(f"{name} is not finite at {point.tolist()}", point=point, field=name)
        approx = central_difference(fun, point, step)
        if not np.all(np.isfinite(approx)):
            raise NonFiniteValueError(f"{name}: evaluation is not finite near {point.tolist()}", point=point, field=name)
        errors[name] = max(errors.get(name, 0.0), relative_error(analytic, approx))

    for x, u, t in zip(X, U, T):
        record('f.jac_x', problem.f.jac_x(x, u), lambda y: problem.f.value(y, u), x)
        record('f.jac_u', problem.f.jac_u(x, u), lambda w: problem.f.value(x, w), u)
        record('psi.grad', problem.psi.grad(x), problem.psi.value, x)
        record('psi.hess', problem.psi.hess(x), problem.psi.grad, x)
        record('h.grad_x', problem.h.grad_x(x, u), lambda y: problem.h.value(y, u), x)
        record('h.grad_u', problem.h.grad_u(x, u), lambda w: problem.h.value(x, w), u)
        record('g.grad', problem.g.grad(x), problem.g.value, x)
        if problem.L is not None:
            record('L.grad_x', problem.L.grad_x(t, x, u), lambda y: problem.L.value(t, y, u), x)
            record('L.grad_u', problem.L.grad_u(t, x, u), lambda w: problem.L.value(t, x, w), u)
        for i, c in enumerate(problem.c0):
            record(f'c0[{i}].grad', c.grad(x), c.value, x)
    return errors


@dataclass(frozen=True)
class RegularityMargin:
    margin: Optional[float]
    active_count: int
    active_nodes: tuple = field(default=())

    @property
    def regular(self):
        return self.margin is None or self.margin >= 1e-6


def regularity_margin(problem, traj, active_tol=None):
    """min |∇_u h| over grid nodes where the mixed constraint is active."""
    traj.check_dimensions(problem)
    X, U = traj.states[:-1], traj.controls
    h = problem.h.value(X, U)
    if active_tol is None:
        active_tol = 1e-6 * (1.0 + float(np.max(np.abs(h))))
    active = np.flatnonzero(np.abs(h) <= active_tol)
    if active.size == 0:
        return RegularityMargin(None, 0)
    norms = np.linalg.norm(problem.h.grad_u(X[active], U[active]), axis=1)
    margin = float(np.min(norms))
    if margin < 1e-6:
        logger.warning("Mixed constraint is not regular on %s: margin %.3e", problem.name, margin)
    return RegularityMargin(margin, int(active.size), tuple(int(j) for j in active))
