"""Augmented Lagrangian solver for the transcribed programs.

Outer loop: first-order multiplier updates and a penalty increase whenever
the constraint violation fails to shrink by a factor of four. Inner loop:
L-BFGS-B on the augmented Lagrangian, with variable boxes handled natively.
Once the iterate is close, Newton steps on the KKT system of the active set
(finite-difference Lagrangian Hessian) finish the solve.
"""
import logging
import time
import warnings
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy import sparse
from scipy.optimize import Bounds, minimize
from scipy.sparse.linalg import spsolve

from .conf import resolve
from .exceptions import AllStartsFailedError, CallbackFailureError, DimensionMismatchError, InvalidConfigurationError
from .utils import max_norm

logger = logging.getLogger(__name__)

MULTIPLIER_BOUND = 1e8
PENALTY_CAP = 1e12
STATUSES = ('converged', 'max_iter', 'infeasible')

# the active-set polish is tried once the scaled KKT error is below the gate
POLISH_GATE = 1e-3
POLISH_MAX_ITER = 6
POLISH_REGULARIZATION = (1e-10, 1e-6)
HESSIAN_STEP = 1e-6


@dataclass(frozen=True)
class KktResidual:
    stationarity: float
    primal_feas: float
    dual_feas: float
    complementarity: float
    # size of the Lagrangian gradient terms; stationarity is judged relative to it
    scale: float = 1.0

    def worst(self):
        return max(self.stationarity, self.primal_feas, self.dual_feas, self.complementarity)

    def scaled_worst(self):
        return max(self.stationarity / self.scale, self.primal_feas, self.dual_feas, self.complementarity)

    def within(self, tol):
        return self.scaled_worst() <= tol

    def is_finite(self):
        return bool(np.all(np.isfinite(list(self.to_dict().values()))))

    def to_dict(self):
        return {
            'stationarity': self.stationarity,
            'primal_feas': self.primal_feas,
            'dual_feas': self.dual_feas,
            'complementarity': self.complementarity,
            'scale': self.scale,
        }


@dataclass
class SolveResult:
    z_star: np.ndarray
    mu_eq: np.ndarray
    mu_ineq: np.ndarray
    status: str
    kkt: KktResidual
    iterations: int
    objective: float
    inner_iterations: int = 0
    penalty: float = 0.0
    stage: Optional[dict] = field(default=None)
    polish_steps: int = 0

    @property
    def converged(self):
        return self.status == 'converged'

    def to_dict(self):
        return {
            'status': self.status,
            'objective': self.objective,
            'iterations': self.iterations,
            'inner_iterations': self.inner_iterations,
            'polish_steps': self.polish_steps,
            'penalty': self.penalty,
            'kkt': self.kkt.to_dict(),
            'stage': self.stage,
            'z_star': self.z_star,
            'mu_eq': self.mu_eq,
            'mu_ineq': self.mu_ineq,
        }

    @classmethod
    def from_dict(cls, data):
        return cls(
            z_star=np.asarray(data['z_star'], dtype=float),
            mu_eq=np.asarray(data['mu_eq'], dtype=float),
            mu_ineq=np.asarray(data['mu_ineq'], dtype=float),
            status=data['status'],
            kkt=KktResidual(**data['kkt']),
            iterations=int(data['iterations']),
            objective=float(data['objective']),
            inner_iterations=int(data.get('inner_iterations', 0)),
            penalty=float(data.get('penalty', 0.0)),
            stage=data.get('stage'),
            polish_steps=int(data.get('polish_steps', 0)),
        )


def _transpose_dot(jac, vec):
    if vec.size == 0:
        return 0.0
    return np.asarray(jac.T @ vec).reshape(-1)


def _finite(name, value, z):
    data = value.data if sparse.issparse(value) else np.asarray(value)
    if not np.all(np.isfinite(data)):
        raise CallbackFailureError(f"{name} returned non-finite values", z=np.array(z, copy=True))
    return value


def _projected_gradient(nlp, z, grad):
    return z - np.clip(z - grad, nlp.lb, nlp.ub)


def _lagrangian_gradient(nlp, z, mu_eq, mu_ineq):
    return (nlp.gradient(z)
            + _transpose_dot(nlp.eq_jacobian(z), mu_eq)
            + _transpose_dot(nlp.ineq_jacobian(z), mu_ineq))


def kkt_residual(nlp, z, mu_eq, mu_ineq):
    """Stationarity (projected onto the variable box), feasibility, dual sign and complementarity."""
    z = np.asarray(z, dtype=float)
    mu_eq = np.asarray(mu_eq, dtype=float).reshape(-1)
    mu_ineq = np.asarray(mu_ineq, dtype=float).reshape(-1)
    if z.shape != (nlp.n_vars,) or mu_eq.size != nlp.n_eq or mu_ineq.size != nlp.n_ineq:
        raise DimensionMismatchError(
            f"kkt_residual expects z[{nlp.n_vars}], mu_eq[{nlp.n_eq}], mu_ineq[{nlp.n_ineq}]; "
            f"got {z.size}, {mu_eq.size}, {mu_ineq.size}"
        )
    c_eq, c_ineq = nlp.eq(z), nlp.ineq(z)
    objective_grad = nlp.gradient(z)
    eq_term = _transpose_dot(nlp.eq_jacobian(z), mu_eq)
    ineq_term = _transpose_dot(nlp.ineq_jacobian(z), mu_ineq)
    lagrangian_grad = objective_grad + eq_term + ineq_term
    box = max(float(np.max(np.maximum(nlp.lb - z, 0.0), initial=0.0)),
              float(np.max(np.maximum(z - nlp.ub, 0.0), initial=0.0)))
    return KktResidual(
        stationarity=float(np.max(np.abs(_projected_gradient(nlp, z, lagrangian_grad)), initial=0.0)),
        primal_feas=max(float(np.max(np.abs(c_eq), initial=0.0)),
                        float(np.max(np.maximum(c_ineq, 0.0), initial=0.0)), box),
        dual_feas=float(np.max(np.maximum(-mu_ineq, 0.0), initial=0.0)),
        complementarity=float(np.max(np.abs(mu_ineq * c_ineq), initial=0.0)),
        scale=max(1.0, max_norm(objective_grad), max_norm(eq_term), max_norm(ineq_term)),
    )


def _lagrangian_hessian(nlp, z, mu_eq, mu_ineq, cols):
    """Central-difference Hessian of the Lagrangian restricted to ``cols``."""
    hess = np.empty((cols.size, cols.size))
    for k, i in enumerate(cols):
        step = HESSIAN_STEP * (1.0 + abs(z[i]))
        forward, backward = z.copy(), z.copy()
        forward[i] += step
        backward[i] -= step
        diff = _lagrangian_gradient(nlp, forward, mu_eq, mu_ineq) - _lagrangian_gradient(nlp, backward, mu_eq, mu_ineq)
        hess[:, k] = diff[cols] / (2.0 * step)
    return 0.5 * (hess + hess.T)


def _polish_step(nlp, z, mu_eq, mu_ineq, tol):
    """Linearize the KKT system of the active set at (z, mu).

    Inequalities within 10·tol of zero, or carrying a multiplier, are treated
    as equalities; variables pinned at a bound by the Lagrangian gradient are
    held fixed. Returns None when every variable is fixed.
    """
    threshold = 10.0 * tol
    c_ineq = nlp.ineq(z)
    active = (c_ineq > -threshold) | ((mu_ineq > tol) & (c_ineq > -np.sqrt(tol)))
    mu_ineq = np.where(active, np.maximum(mu_ineq, 0.0), 0.0)
    grad = _lagrangian_gradient(nlp, z, mu_eq, mu_ineq)
    at_lower = (z <= nlp.lb + threshold) & (grad > 0.0)
    at_upper = (z >= nlp.ub - threshold) & (grad < 0.0)
    cols = np.flatnonzero(~((nlp.lb == nlp.ub) | at_lower | at_upper))
    if cols.size == 0:
        return None
    rows = np.flatnonzero(active)
    blocks = [m for m in (sparse.csr_matrix(nlp.eq_jacobian(z))[:, cols],
                          sparse.csr_matrix(nlp.ineq_jacobian(z))[rows][:, cols]) if m.shape[0]]
    jac = sparse.vstack(blocks, format='csr') if blocks else None
    rhs = np.concatenate([-grad[cols], -nlp.eq(z), -c_ineq[rows]])
    hess = sparse.csr_matrix(_lagrangian_hessian(nlp, z, mu_eq, mu_ineq, cols))
    return {'cols': cols, 'rows': rows, 'jac': jac, 'hess': hess, 'rhs': rhs,
            'mu_ineq': mu_ineq, 'at_lower': at_lower, 'at_upper': at_upper}


def _solve_regularized(system, delta):
    n_free = system['cols'].size
    upper = system['hess'] + delta * sparse.identity(n_free, format='csr')
    if system['jac'] is None:
        matrix = upper.tocsc()
    else:
        jac = system['jac']
        lower = -delta * sparse.identity(jac.shape[0], format='csr')
        matrix = sparse.bmat([[upper, jac.T], [jac, lower]], format='csc')
    with warnings.catch_warnings():
        warnings.simplefilter('ignore')
        step = np.atleast_1d(spsolve(matrix, system['rhs']))
    return step if np.all(np.isfinite(step)) else None


def _newton_polish(nlp, z, mu_eq, mu_ineq, kkt, tol):
    """Newton iterations on the KKT system of the active set.

    Each linear solve is tried with a small proximal regularization first and
    a stronger one second, for flat directions of degenerate programs. A step
    is kept only if it lowers the scaled KKT error, so the input comes back
    unchanged when no step helps.
    """
    best = (z, mu_eq, mu_ineq, kkt)
    steps = 0
    for _ in range(POLISH_MAX_ITER):
        z, mu_eq, mu_ineq, kkt = best
        system = _polish_step(nlp, z, mu_eq, mu_ineq, tol)
        if system is None:
            break
        cols, rows = system['cols'], system['rows']
        n_free = cols.size
        improved = None
        for delta in POLISH_REGULARIZATION:
            step = _solve_regularized(system, delta)
            if step is None:
                continue
            trial_z = z.copy()
            trial_z[cols] += step[:n_free]
            trial_z = np.clip(trial_z, nlp.lb, nlp.ub)
            trial_z[system['at_lower']] = nlp.lb[system['at_lower']]
            trial_z[system['at_upper']] = nlp.ub[system['at_upper']]
            trial_eq = mu_eq + step[n_free:n_free + nlp.n_eq]
            trial_ineq = system['mu_ineq'].copy()
            trial_ineq[rows] = np.maximum(trial_ineq[rows] + step[n_free + nlp.n_eq:], 0.0)
            with np.errstate(all='ignore'):
                trial_kkt = kkt_residual(nlp, trial_z, trial_eq, trial_ineq)
            if trial_kkt.is_finite() and trial_kkt.scaled_worst() < kkt.scaled_worst():
                improved = (trial_z, trial_eq, trial_ineq, trial_kkt)
                break
        if improved is None:
            break
        best = improved
        steps += 1
        if best[3].within(tol):
            break
    logger.debug("%s: %d polish steps, scaled KKT error %.2e", nlp.name, steps, best[3].scaled_worst())
    return best, steps


def solve(nlp, z0, tol=None, max_outer=None, mu_eq0=None, mu_ineq0=None, penalty0=None, max_inner=None):
    tol = resolve(tol, 'SOLVER_TOL')
    max_outer = resolve(max_outer, 'SOLVER_MAX_OUTER')
    max_inner = resolve(max_inner, 'SOLVER_MAX_INNER')
    rho = float(resolve(penalty0, 'SOLVER_PENALTY0'))
    if not 0.0 < tol <= 1e-2:
        raise InvalidConfigurationError(f"tol must lie in (0, 1e-2], got {tol}")
    z = np.asarray(z0, dtype=float).reshape(-1)
    if z.size != nlp.n_vars:
        raise DimensionMismatchError(f"z0 has length {z.size}, expected {nlp.n_vars}")
    if not np.all(np.isfinite(z)):
        raise InvalidConfigurationError("z0 must be finite")
    z = np.clip(z, nlp.lb, nlp.ub)
    mu_eq = np.zeros(nlp.n_eq) if mu_eq0 is None else np.array(mu_eq0, dtype=float)
    mu_ineq = np.zeros(nlp.n_ineq) if mu_ineq0 is None else np.maximum(np.array(mu_ineq0, dtype=float), 0.0)
    bounds = Bounds(nlp.lb, nlp.ub)
    # ftol=0 leaves the stop to gtol
    options = {'maxiter': max_inner, 'maxcor': 50, 'gtol': 0.1 * tol, 'ftol': 0.0, 'maxls': 40}

    def augmented(zz):
        value = nlp.objective(zz)
        grad = _finite('objective gradient', nlp.gradient(zz), zz)
        c_eq = _finite('equality constraints', nlp.eq(zz), zz)
        c_ineq = _finite('inequality constraints', nlp.ineq(zz), zz)
        if not np.isfinite(value):
            raise CallbackFailureError("objective returned a non-finite value", z=np.array(zz, copy=True))
        shifted = np.maximum(mu_ineq + rho * c_ineq, 0.0)
        value += mu_eq @ c_eq + 0.5 * rho * (c_eq @ c_eq) + (shifted @ shifted - mu_ineq @ mu_ineq) / (2.0 * rho)
        if nlp.n_eq:
            grad = grad + _transpose_dot(_finite('equality Jacobian', nlp.eq_jacobian(zz), zz), mu_eq + rho * c_eq)
        if nlp.n_ineq:
            grad = grad + _transpose_dot(_finite('inequality Jacobian', nlp.ineq_jacobian(zz), zz), shifted)
        return value, grad

    start_time = time.time()
    kkt = kkt_residual(nlp, z, mu_eq, mu_ineq)
    violation = kkt.primal_feas
    status = 'max_iter'
    inner_total = 0
    polish_total = 0
    outer = 0
    for outer in range(1, max_outer + 1):
        result = minimize(augmented, z, jac=True, method='L-BFGS-B', bounds=bounds, options=options)
        z = result.x
        inner_total += int(result.nit)
        c_eq, c_ineq = nlp.eq(z), nlp.ineq(z)
        mu_eq = np.clip(mu_eq + rho * c_eq, -MULTIPLIER_BOUND, MULTIPLIER_BOUND)
        mu_ineq = np.clip(mu_ineq + rho * c_ineq, 0.0, MULTIPLIER_BOUND)
        kkt = kkt_residual(nlp, z, mu_eq, mu_ineq)
        logger.debug(
            "%s outer %d: rho=%.1e stationarity=%.2e feas=%.2e compl=%.2e (%s)",
            nlp.name, outer, rho, kkt.stationarity, kkt.primal_feas, kkt.complementarity, result.message,
        )
        if not kkt.within(tol) and kkt.scaled_worst() <= POLISH_GATE:
            (z, mu_eq, mu_ineq, kkt), steps = _newton_polish(nlp, z, mu_eq, mu_ineq, kkt, tol)
            polish_total += steps
        if kkt.within(tol):
            status = 'converged'
            break
        if kkt.primal_feas > tol and kkt.primal_feas > 0.25 * violation:
            if rho >= PENALTY_CAP:
                status = 'infeasible'
                logger.warning("%s: penalty at its cap with violation %.3e", nlp.name, kkt.primal_feas)
                break
            rho = min(10.0 * rho, PENALTY_CAP)
            logger.info("%s: penalty increased to %.1e (violation %.3e)", nlp.name, rho, kkt.primal_feas)
        violation = kkt.primal_feas

    elapsed = time.time() - start_time
    log = logger.info if status == 'converged' else logger.warning
    log("Solve of %s finished with status %s after %d outer / %d inner iterations and %d polish steps "
        "in %.2f seconds (stationarity %.2e, feasibility %.2e)",
        nlp.name, status, outer, inner_total, polish_total, elapsed, kkt.stationarity, kkt.primal_feas)
    return SolveResult(
        z_star=z, mu_eq=mu_eq, mu_ineq=mu_ineq, status=status, kkt=kkt, iterations=outer,
        objective=nlp.objective(z), inner_iterations=inner_total, penalty=rho, polish_steps=polish_total,
    )


def multistart(nlp, starts, tol=None, **kwargs):
    """Best converged result over several starts: lowest objective, then stationarity, then index."""
    starts = list(starts)
    if not starts:
        raise InvalidConfigurationError("multistart needs at least one start")
    tol = resolve(tol, 'SOLVER_TOL')
    results = [solve(nlp, z0, tol=tol, **kwargs) for z0 in starts]
    best = None
    for index, result in enumerate(results):
        if not result.converged:
            logger.warning("%s: start %d ended with status %s", nlp.name, index, result.status)
            continue
        if best is None:
            best = result
            continue
        scale = tol * (1.0 + abs(best.objective))
        if result.objective < best.objective - scale:
            best = result
        elif abs(result.objective - best.objective) <= scale and result.kkt.stationarity < best.kkt.stationarity - tol:
            best = result
    if best is None:
        raise AllStartsFailedError([r.status for r in results])
    return best
