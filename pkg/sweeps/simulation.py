"""Forward simulation of the sweeping dynamics.

Two integrators are provided: Moreau catch-up (project after an explicit
Euler step) and the exponential penalty system
x' = f(x,u) − γ e^{γψ(x)} ∇ψ(x), integrated by implicit Euler substeps.
"""
import logging
import time
from dataclasses import dataclass

import numpy as np

from .conf import resolve
from .exceptions import InvalidConfigurationError, NewtonDivergenceError, ProjectionError
from .problem import gamma_lower_bound
from .trajectory import ControlSignal, Grid, StateTrajectory

logger = logging.getLogger(__name__)

# exponent cap for e^{γψ}; beyond it the state is far outside C anyway
EXP_CAP = 60.0
NEWTON_MAX_ITER = 50
EPS = np.finfo(float).eps


def penalty_coefficient(psi_values, gamma):
    """ξ = γ e^{γψ} with the exponent capped."""
    with np.errstate(under='ignore'):
        return gamma * np.exp(np.minimum(gamma * np.asarray(psi_values, dtype=float), EXP_CAP))


def _roundoff(*norms):
    return 16.0 * EPS * (1.0 + sum(norms))


def _prox_point(psi, x, lam, y, tol, max_iter):
    """Solve y − x + λ∇ψ(y) = 0 by damped Newton, starting from y.

    At least one Newton step is taken. The residual target keeps the induced
    error in ψ(y) a hundred times below ``tol``; a residual that can no longer
    be reduced is accepted once it is at roundoff level.
    """
    eye = np.eye(x.size)
    x_norm = np.linalg.norm(x)
    r = y - x + lam * psi.grad(y)
    rn = np.linalg.norm(r)
    for iteration in range(max_iter):
        grad_norm = np.linalg.norm(psi.grad(y))
        floor = _roundoff(x_norm, np.linalg.norm(y), lam * grad_norm)
        target = max(1e-2 * tol / (1.0 + grad_norm), floor)
        if iteration > 0 and rn <= target:
            return y
        step = np.linalg.solve(eye + lam * psi.hess(y), r)
        t = 1.0
        while True:
            candidate = y - t * step
            cr = candidate - x + lam * psi.grad(candidate)
            cn = np.linalg.norm(cr)
            if cn <= (1.0 - 1e-4 * t) * rn or cn == 0.0:
                break
            t *= 0.5
            if t < 1e-10:
                if rn <= 1e3 * floor:
                    return y
                raise ProjectionError(f"prox step stalled for lambda={lam:.6g}", last_iterate=y, residual=rn)
        y, r, rn = candidate, cr, cn
    raise ProjectionError(f"prox step did not converge for lambda={lam:.6g}", last_iterate=y, residual=rn)


def project_onto_C(problem, x, tol=None, max_iter=None):
    """Euclidean projection onto C = {ψ ≤ 0}.

    Solves y = x − λ∇ψ(y) with ψ(y) = 0 by safeguarded Newton on the scalar
    φ(λ) = ψ(y(λ)), bisecting whenever the Newton step leaves the bracket.
    Once λ can no longer move (bracket or Newton step at machine precision)
    the best point found is returned; |ψ| has then reached its roundoff floor.
    """
    tol = resolve(tol, 'PROJECTION_TOL')
    max_iter = resolve(max_iter, 'PROJECTION_MAX_ITER')
    psi = problem.psi
    x = np.asarray(x, dtype=float)
    if float(psi.value(x)) <= 0.0:
        return x.copy()

    eye = np.eye(x.size)
    lo, hi = 0.0, np.inf
    lam = 0.0
    y = x.copy()
    phi = float(psi.value(x))
    best_y, best_phi = y, phi
    for _ in range(max_iter):
        y = _prox_point(psi, x, lam, y, tol, max_iter)
        phi = float(psi.value(y))
        if abs(phi) < abs(best_phi):
            best_y, best_phi = y, phi
        if abs(phi) <= tol:
            return y
        if phi > 0.0:
            lo = lam
        else:
            hi = lam
        gradient = psi.grad(y)
        dy = -np.linalg.solve(eye + lam * psi.hess(y), gradient)
        dphi = float(gradient @ dy)
        candidate = lam - phi / dphi if dphi < 0.0 else np.nan
        if not (lo < candidate < hi):
            candidate = 0.5 * (lo + hi) if np.isfinite(hi) else 2.0 * lo + 1.0
        if abs(candidate - lam) <= 4.0 * EPS * max(lam, 1.0):
            logger.debug("Projection of %s stopped at the roundoff floor (psi=%.3e)", x.tolist(), best_phi)
            return best_y
        lam = candidate
    raise ProjectionError(
        f"projection of {x.tolist()} did not converge (psi={phi:.3e})", last_iterate=y, residual=abs(phi)
    )


def _check_start(problem, x0):
    if x0 is None:
        return problem.x0.copy()
    x0 = np.asarray(x0, dtype=float).reshape(-1)
    if x0.size != problem.n:
        raise InvalidConfigurationError(f"x0 has dimension {x0.size}, expected {problem.n}")
    if problem.singleton_start:
        if not np.allclose(x0, problem.x0, rtol=0.0, atol=1e-12):
            raise InvalidConfigurationError(f"x0 must equal the anchor {problem.x0.tolist()} (C0 is a singleton)")
    elif max(float(c.value(x0)) for c in problem.c0) > 1e-12:
        raise InvalidConfigurationError("x0 violates the C0 constraints")
    return x0


def _check_control(problem, control):
    if control.control_dim != problem.m:
        raise InvalidConfigurationError(f"control has dimension {control.control_dim}, expected {problem.m}")


def simulate_catchup(problem, control, x0=None, tol=None):
    """Moreau catch-up: x_{j+1} = P_C(x_j + Δt f(x_j, u_j))."""
    _check_control(problem, control)
    x = _check_start(problem, x0)
    grid = control.grid
    dt = grid.dt
    states = np.empty((grid.N + 1, problem.n))
    states[0] = x
    start_time = time.time()
    for j in range(grid.N):
        u = control.values[j]
        try:
            states[j + 1] = project_onto_C(problem, states[j] + dt * problem.f.value(states[j], u), tol=tol)
        except ProjectionError:
            logger.error("Catch-up projection failed at step %d of %s", j, problem.name)
            raise
    logger.info("Catch-up simulation of %s (N=%d) completed in %.2f seconds", problem.name, grid.N, time.time() - start_time)
    return StateTrajectory(grid, states, control.values)


def _penalty_step(problem, x, u, h, gamma, step_index):
    """One implicit Euler substep of the penalty system."""
    psi, f = problem.psi, problem.f
    eye = np.eye(x.size)
    tol = 1e-12 * (1.0 + np.linalg.norm(x))

    def residual(y):
        xi = penalty_coefficient(psi.value(y), gamma)
        return y - x - h * (f.value(y, u) - xi * psi.grad(y))

    y = x.copy()
    r = residual(y)
    rn = np.linalg.norm(r)
    for _ in range(NEWTON_MAX_ITER):
        if rn <= tol:
            return y
        gpsi = psi.grad(y)
        xi = penalty_coefficient(psi.value(y), gamma)
        jac = eye - h * (f.jac_x(y, u) - xi * (psi.hess(y) + gamma * np.outer(gpsi, gpsi)))
        with np.errstate(all='ignore'):
            step = np.linalg.solve(jac, r)
        if not np.all(np.isfinite(step)):
            break
        t = 1.0
        while True:
            candidate = y - t * step
            with np.errstate(all='ignore'):
                cr = residual(candidate)
            cn = np.linalg.norm(cr)
            if np.isfinite(cn) and cn <= (1.0 - 1e-4 * t) * rn:
                break
            t *= 0.5
            if t < 1e-12:
                # no further decrease possible; accept a roundoff-level residual
                if rn <= 1e-9 * (1.0 + np.linalg.norm(x)):
                    return y
                raise NewtonDivergenceError(gamma, step_index, rn)
        y, r, rn = candidate, cr, cn
    if rn <= 1e-9 * (1.0 + np.linalg.norm(x)):
        return y
    raise NewtonDivergenceError(gamma, step_index, rn)


def _check_gamma(gamma, report):
    if not gamma > 0:
        raise InvalidConfigurationError(f"gamma must be positive, got {gamma}")
    if report is not None:
        bound = gamma_lower_bound(report)
        if gamma < bound:
            raise InvalidConfigurationError(f"gamma={gamma:g} is below the admissible bound 2M/eta={bound:.4g}")


def simulate_penalty(problem, control, gamma, substeps=None, x0=None, report=None):
    """Integrate the penalty system with ``substeps`` implicit Euler steps per interval."""
    substeps = resolve(substeps, 'SUBSTEPS')
    if substeps < 1:
        raise InvalidConfigurationError("substeps must be at least 1")
    _check_gamma(gamma, report)
    _check_control(problem, control)
    x = _check_start(problem, x0)
    grid = control.grid
    h = grid.dt / substeps
    states = np.empty((grid.N + 1, problem.n))
    states[0] = x
    start_time = time.time()
    for j in range(grid.N):
        u = control.values[j]
        for k in range(substeps):
            try:
                x = _penalty_step(problem, x, u, h, gamma, j * substeps + k)
            except NewtonDivergenceError:
                logger.error("Penalty integration of %s failed at interval %d", problem.name, j)
                raise
        states[j + 1] = x
    logger.info(
        "Penalty simulation of %s (N=%d, gamma=%g, substeps=%d) completed in %.2f seconds",
        problem.name, grid.N, gamma, substeps, time.time() - start_time,
    )
    return StateTrajectory(grid, states, control.values)


def compute_delta(problem, control, gamma, x0=None, substeps=None, report=None):
    """max_j h(x_j, u_j) along the penalty trajectory; negative means no relaxation is needed."""
    traj = simulate_penalty(problem, control, gamma, substeps=substeps, x0=x0, report=report)
    return float(np.max(problem.h.value(traj.states[:-1], traj.controls)))


@dataclass(frozen=True)
class ConvergenceTable:
    rows: tuple

    @property
    def gammas(self):
        return sorted({row['gamma'] for row in self.rows})

    @property
    def grids(self):
        return sorted({row['N'] for row in self.rows})

    def gap(self, gamma, N):
        for row in self.rows:
            if row['gamma'] == gamma and row['N'] == N:
                return row['gap']
        raise KeyError((gamma, N))

    def monotone_in_gamma(self):
        """Per grid: gaps strictly decreasing as gamma increases."""
        flags = {}
        for N in self.grids:
            gaps = [self.gap(gamma, N) for gamma in self.gammas]
            flags[N] = all(b < a for a, b in zip(gaps, gaps[1:]))
        return flags

    def monotone_in_grid(self):
        """Per gamma: gaps non-increasing under refinement (reported, not required)."""
        flags = {}
        for gamma in self.gammas:
            gaps = [self.gap(gamma, N) for N in self.grids]
            flags[gamma] = all(b <= a for a, b in zip(gaps, gaps[1:]))
        return flags

    def gamma_rates(self):
        """Observed log-ratio of successive gaps against successive gammas, per grid."""
        rates = {}
        gammas = self.gammas
        for N in self.grids:
            values = []
            for g1, g2 in zip(gammas, gammas[1:]):
                a, b = self.gap(g1, N), self.gap(g2, N)
                values.append(float(np.log(a / b) / np.log(g2 / g1)) if a > 0 and b > 0 else None)
            rates[N] = values
        return rates

    @property
    def monotone(self):
        return all(self.monotone_in_gamma().values())

    def summary(self):
        return {
            'monotone': self.monotone,
            'monotone_in_gamma': {str(k): v for k, v in self.monotone_in_gamma().items()},
            'monotone_in_grid': {repr(k): v for k, v in self.monotone_in_grid().items()},
            'gamma_rates': {str(k): v for k, v in self.gamma_rates().items()},
        }


def convergence_study(problem, control, gammas, grids, substeps=None, report=None):
    """Sup-norm gaps between penalty and catch-up trajectories for every (gamma, N)."""
    gammas = [float(g) for g in gammas]
    grids = [int(N) for N in grids]
    if not gammas or not grids:
        raise InvalidConfigurationError("convergence study needs at least one gamma and one grid")
    if any(b <= a for a, b in zip(gammas, gammas[1:])):
        raise InvalidConfigurationError("gammas must be strictly increasing")
    start_time = time.time()
    rows = []
    for N in grids:
        local = control.resample(Grid(N)) if isinstance(control, ControlSignal) else ControlSignal.constant(Grid(N), control)
        reference = simulate_catchup(problem, local)
        for gamma in gammas:
            penalized = simulate_penalty(problem, local, gamma, substeps=substeps, report=report)
            rows.append({'gamma': gamma, 'N': N, 'gap': penalized.sup_distance(reference)})
    table = ConvergenceTable(tuple(sorted(rows, key=lambda row: (row['gamma'], row['N']))))
    logger.info("Convergence study of %s (%d cells) completed in %.2f seconds", problem.name, len(rows), time.time() - start_time)
    return table
