"""End-to-end solve pipelines: warm start, transcription, solver and post-processing."""
import logging
import time
from dataclasses import dataclass, field

import numpy as np

from .conf import resolve
from .exceptions import InvalidConfigurationError
from .simulation import compute_delta, simulate_catchup, simulate_penalty
from .solver import solve
from .trajectory import ControlSignal, Grid, StateTrajectory
from .transcription import TranscriptionConfig, extract_trajectory, transcribe_complementarity, transcribe_penalty

logger = logging.getLogger(__name__)


@dataclass
class RouteResult:
    problem_name: str
    cfg: TranscriptionConfig
    nlp: object
    solve: object
    trajectory: object
    objective: float
    nlp_objective: float
    stages: list = field(default_factory=list)

    @property
    def converged(self):
        return self.solve.converged

    def to_dict(self):
        return {
            'problem': self.problem_name,
            'config': self.cfg.to_dict(),
            'objective': self.objective,
            'nlp_objective': self.nlp_objective,
            'stages': self.stages,
            'result': self.solve.to_dict(),
        }


def warm_start_control(problem, N, control=None):
    grid = Grid(N)
    if control is None:
        return ControlSignal.constant(grid, np.zeros(problem.m))
    if isinstance(control, ControlSignal):
        return control.resample(grid)
    return ControlSignal.constant(grid, control)


def objective_value(problem, traj):
    """g(x_N) plus the left-endpoint Riemann sum of L."""
    value = float(problem.g.value(traj.states[-1]))
    if problem.L is not None:
        t = traj.grid.nodes[:-1]
        value += traj.grid.dt * float(np.sum(problem.L.value(t, traj.states[:-1], traj.controls)))
    return value


def recovered_objective(problem, control):
    """Objective of the sweeping process itself, re-simulated by catch-up under ``control``."""
    return objective_value(problem, simulate_catchup(problem, control))


def catchup_with_slacks(problem, control):
    """Catch-up trajectory with the slacks v_j that explain each projection step along ∇ψ(x_j)."""
    traj = simulate_catchup(problem, control)
    X, dt = traj.states, traj.grid.dt
    gpsi = problem.psi.grad(X[:-1])
    pushed = X[:-1] + dt * problem.f.value(X[:-1], traj.controls) - X[1:]
    slacks = np.maximum(np.einsum('ki,ki->k', pushed, gpsi) / (dt * np.sum(gpsi ** 2, axis=1)), 0.0)
    return StateTrajectory(traj.grid, X, traj.controls, slacks)


def resolve_delta(problem, control, gamma, delta, report=None, substeps=None):
    if delta == 'auto':
        value = max(0.0, compute_delta(problem, control, gamma, substeps=substeps, report=report))
        logger.info("Mixed-constraint relaxation for %s: delta=%.3e", problem.name, value)
        return value
    return float(delta)


def solve_penalty_route(problem, N, gamma, delta=0.0, control=None, tol=None, max_outer=None,
                        substeps=None, report=None):
    start_time = time.time()
    control0 = warm_start_control(problem, N, control)
    delta = resolve_delta(problem, control0, gamma, delta, report=report, substeps=substeps)
    cfg = TranscriptionConfig(N=N, mode='penalty', gamma=gamma, delta=delta)
    # one implicit substep per interval reproduces the transcription exactly
    warm = simulate_penalty(problem, control0, gamma, substeps=1, report=report)
    nlp = transcribe_penalty(problem, cfg)
    result = solve(nlp, nlp.layout.flatten(warm), tol=tol, max_outer=max_outer)
    traj = extract_trajectory(nlp, result.z_star)
    objective = recovered_objective(problem, traj.control)
    logger.info("Penalty route for %s completed in %.2f seconds (nlp objective %.6g, recovered %.6g)",
                problem.name, time.time() - start_time, result.objective, objective)
    return RouteResult(problem.name, cfg, nlp, result, traj, objective, result.objective)


def solve_complementarity_route(problem, N, schedule=None, control=None, tol=None, max_outer=None, rho=None):
    """Relaxed complementarity solves along a decreasing ε-schedule, each warm-started."""
    schedule = [float(eps) for eps in resolve(schedule, 'EPSILON_SCHEDULE')]
    if not schedule or any(eps < 0 for eps in schedule) or any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise InvalidConfigurationError("epsilon schedule must be non-empty, non-negative and strictly decreasing")
    start_time = time.time()
    control0 = warm_start_control(problem, N, control)
    base = TranscriptionConfig(N=N, mode='complementarity', comp_relax=schedule[0], rho=rho)
    z = None
    mu_eq = mu_ineq = None
    penalty = None
    stages = []
    completed = 0
    for eps in schedule:
        cfg = base.with_epsilon(eps)
        nlp = transcribe_complementarity(problem, cfg)
        if z is None:
            z = nlp.layout.flatten(catchup_with_slacks(problem, control0))
        stage_start = time.time()
        result = solve(nlp, z, tol=tol, max_outer=max_outer, mu_eq0=mu_eq, mu_ineq0=mu_ineq, penalty0=penalty)
        stages.append({'epsilon': eps, 'status': result.status, 'objective': result.objective,
                       'iterations': result.iterations})
        logger.info("Stage eps=%g of %s: %s in %.2f seconds", eps, problem.name, result.status, time.time() - stage_start)
        z, mu_eq, mu_ineq, penalty = result.z_star, result.mu_eq, result.mu_ineq, result.penalty
        if not result.converged:
            logger.warning("Epsilon schedule for %s stopped at eps=%g", problem.name, eps)
            break
        completed += 1
    result.stage = {'epsilon': cfg.comp_relax, 'completed': completed, 'total': len(schedule)}
    traj = extract_trajectory(nlp, result.z_star)
    objective = objective_value(problem, traj) if problem.L is None else result.objective
    logger.info("Complementarity route for %s completed in %.2f seconds (objective %.6g)",
                problem.name, time.time() - start_time, objective)
    return RouteResult(problem.name, cfg, nlp, result, traj, objective, result.objective, stages)
