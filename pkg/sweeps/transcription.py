"""Direct transcription of the sweeping control problem into smooth NLPs.

Penalty mode discretizes the penalty system with implicit Euler; the
complementarity mode keeps the normal-cone slack v as a decision variable
with explicit Euler and relaxes v·ψ(x) = 0 to −v·ψ(x) ≤ ε.
"""
import logging
from dataclasses import asdict, dataclass
from typing import Optional

import numpy as np
from scipy import sparse

from .exceptions import DimensionMismatchError, InvalidConfigurationError
from .simulation import penalty_coefficient
from .trajectory import Grid, StateTrajectory

logger = logging.getLogger(__name__)

MODES = ('penalty', 'complementarity')


@dataclass(frozen=True)
class TranscriptionConfig:
    N: int
    mode: str = 'penalty'
    gamma: Optional[float] = None
    delta: float = 0.0
    comp_relax: float = 0.0
    rho: Optional[float] = None

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 2:
            raise InvalidConfigurationError(f"N must be an integer >= 2, got {self.N}")
        if self.mode not in MODES:
            raise InvalidConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.mode == 'penalty' and not (self.gamma is not None and self.gamma > 0):
            raise InvalidConfigurationError("penalty mode needs gamma > 0")
        if self.comp_relax < 0:
            raise InvalidConfigurationError("comp_relax must be non-negative")
        if self.rho is not None and not self.rho > 0:
            raise InvalidConfigurationError("rho must be positive")

    def with_epsilon(self, eps):
        return TranscriptionConfig(self.N, self.mode, self.gamma, self.delta, eps, self.rho)

    def to_dict(self):
        return asdict(self)


class VariableLayout:
    """Index map of z: states x_0..x_N, controls u_0..u_{N-1}, optional slacks v_0..v_{N-1}."""

    def __init__(self, N, n, m, with_slack, eq_blocks, ineq_blocks):
        self.N, self.n, self.m, self.with_slack = N, n, m, with_slack
        self.x = slice(0, (N + 1) * n)
        self.u = slice(self.x.stop, self.x.stop + N * m)
        self.v = slice(self.u.stop, self.u.stop + N) if with_slack else None
        self.n_vars = (self.v or self.u).stop
        self.eq_blocks = self._blocks(eq_blocks)
        self.ineq_blocks = self._blocks(ineq_blocks)

    @staticmethod
    def _blocks(sizes):
        blocks, offset = {}, 0
        for name, size in sizes:
            blocks[name] = slice(offset, offset + size)
            offset += size
        return blocks

    @property
    def n_eq(self):
        return max((s.stop for s in self.eq_blocks.values()), default=0)

    @property
    def n_ineq(self):
        return max((s.stop for s in self.ineq_blocks.values()), default=0)

    def states(self, z):
        return z[self.x].reshape(self.N + 1, self.n)

    def controls(self, z):
        return z[self.u].reshape(self.N, self.m)

    def slacks(self, z):
        return z[self.v] if self.with_slack else None

    def x_cols(self, j):
        return self.x.start + np.asarray(j) * self.n

    def u_cols(self, j):
        return self.u.start + np.asarray(j) * self.m

    def v_cols(self, j):
        return self.v.start + np.asarray(j)

    def flatten(self, traj):
        if traj.grid.N != self.N or traj.state_dim != self.n or traj.control_dim != self.m:
            raise DimensionMismatchError("trajectory does not match the transcription layout")
        parts = [traj.states.ravel(), traj.controls.ravel()]
        if self.with_slack:
            parts.append(np.zeros(self.N) if traj.slacks is None else traj.slacks)
        return np.concatenate(parts)

    def to_dict(self):
        span = lambda s: [s.start, s.stop]
        return {
            'N': self.N, 'n': self.n, 'm': self.m,
            'n_vars': self.n_vars,
            'variables': {'x': span(self.x), 'u': span(self.u), **({'v': span(self.v)} if self.with_slack else {})},
            'equalities': {name: span(s) for name, s in self.eq_blocks.items()},
            'inequalities': {name: span(s) for name, s in self.ineq_blocks.items()},
        }


class NlpProblem:
    """min F(z) s.t. c_E(z) = 0, c_I(z) ≤ 0, lb ≤ z ≤ ub.

    Jacobian callbacks may return dense arrays or scipy sparse matrices.
    """

    def __init__(self, n_vars, objective, gradient, eq=None, eq_jacobian=None, ineq=None,
                 ineq_jacobian=None, n_eq=0, n_ineq=0, lb=None, ub=None, layout=None,
                 config=None, name='nlp'):
        self.n_vars = int(n_vars)
        self.n_eq, self.n_ineq = int(n_eq), int(n_ineq)
        self._objective, self._gradient = objective, gradient
        self._eq, self._eq_jacobian = eq, eq_jacobian
        self._ineq, self._ineq_jacobian = ineq, ineq_jacobian
        self.lb = np.full(self.n_vars, -np.inf) if lb is None else np.asarray(lb, dtype=float)
        self.ub = np.full(self.n_vars, np.inf) if ub is None else np.asarray(ub, dtype=float)
        self.layout = layout
        self.config = config
        self.name = name

    def _check(self, z):
        z = np.asarray(z, dtype=float)
        if z.shape != (self.n_vars,):
            raise DimensionMismatchError(f"{self.name}: expected z of length {self.n_vars}, got {z.shape}")
        return z

    def objective(self, z):
        return float(self._objective(self._check(z)))

    def gradient(self, z):
        return np.asarray(self._gradient(self._check(z)), dtype=float)

    def eq(self, z):
        return np.asarray(self._eq(self._check(z)), dtype=float) if self.n_eq else np.zeros(0)

    def eq_jacobian(self, z):
        return self._eq_jacobian(self._check(z)) if self.n_eq else sparse.csr_matrix((0, self.n_vars))

    def ineq(self, z):
        return np.asarray(self._ineq(self._check(z)), dtype=float) if self.n_ineq else np.zeros(0)

    def ineq_jacobian(self, z):
        return self._ineq_jacobian(self._check(z)) if self.n_ineq else sparse.csr_matrix((0, self.n_vars))


def _block_entries(blocks, row0, col0):
    """COO triplets for a stack of dense blocks placed at (row0[k], col0[k])."""
    blocks = np.asarray(blocks, dtype=float)
    k, a, b = blocks.shape
    rows = np.asarray(row0)[:, None, None] + np.arange(a)[None, :, None]
    cols = np.asarray(col0)[:, None, None] + np.arange(b)[None, None, :]
    rows, cols = np.broadcast_arrays(rows, cols)
    return blocks.ravel(), rows.ravel(), cols.ravel()


def _assemble(shape, entries):
    if not entries:
        return sparse.csr_matrix(shape)
    data = np.concatenate([e[0] for e in entries])
    rows = np.concatenate([e[1] for e in entries])
    cols = np.concatenate([e[2] for e in entries])
    return sparse.csr_matrix((data, (rows, cols)), shape=shape)


def _start_bounds(problem, layout):
    lb = np.full(layout.n_vars, -np.inf)
    ub = np.full(layout.n_vars, np.inf)
    if problem.singleton_start:
        cols = layout.x_cols(0) + np.arange(layout.n)
        lb[cols] = problem.x0
        ub[cols] = problem.x0
    return lb, ub


def _c0_rows(problem, x_start):
    return [float(c.value(x_start)) for c in problem.c0]


def _c0_entries(problem, layout, z, row0):
    x_start = layout.states(z)[0]
    entries = []
    for i, c in enumerate(problem.c0):
        entries.append(_block_entries(c.grad(x_start)[None, None, :], [row0 + i], [layout.x_cols(0)]))
    return entries


def _running_cost(problem, layout, t, X, U, dt):
    if problem.L is None:
        return 0.0
    return dt * float(np.sum(problem.L.value(t[:-1], X[:-1], U)))


def _running_cost_gradient(problem, layout, grad, t, X, U, dt):
    if problem.L is None:
        return
    grad[layout.x.start:layout.x.start + layout.N * layout.n] += dt * problem.L.grad_x(t[:-1], X[:-1], U).ravel()
    grad[layout.u] += dt * problem.L.grad_u(t[:-1], X[:-1], U).ravel()


def transcribe_penalty(problem, cfg):
    """Implicit-Euler discretization of the penalty problem.

    Equalities: x_{j+1} − x_j − Δt[f(x_{j+1},u_j) − ξ(x_{j+1})∇ψ(x_{j+1})] = 0.
    Inequalities: h(x_j,u_j) − δ ≤ 0 for j < N, then c0_i(x_0) ≤ 0.
    """
    if cfg.mode != 'penalty':
        raise InvalidConfigurationError("transcribe_penalty needs a penalty-mode configuration")
    N, n, m = cfg.N, problem.n, problem.m
    dt, gamma, delta = 1.0 / N, float(cfg.gamma), float(cfg.delta)
    layout = VariableLayout(N, n, m, False, [('dynamics', N * n)], [('mixed', N), ('c0', len(problem.c0))])
    t = Grid(N).nodes
    f, psi, h, g = problem.f, problem.psi, problem.h, problem.g
    eye = np.eye(n)
    steps = np.arange(N)

    def objective(z):
        X, U = layout.states(z), layout.controls(z)
        return float(g.value(X[N])) + _running_cost(problem, layout, t, X, U, dt)

    def gradient(z):
        X, U = layout.states(z), layout.controls(z)
        grad = np.zeros(layout.n_vars)
        grad[layout.x_cols(N):layout.x_cols(N) + n] = g.grad(X[N])
        _running_cost_gradient(problem, layout, grad, t, X, U, dt)
        return grad

    def eq(z):
        X, U = layout.states(z), layout.controls(z)
        Xn = X[1:]
        xi = penalty_coefficient(psi.value(Xn), gamma)
        return (Xn - X[:-1] - dt * (f.value(Xn, U) - xi[:, None] * psi.grad(Xn))).ravel()

    def eq_jacobian(z):
        X, U = layout.states(z), layout.controls(z)
        Xn = X[1:]
        gpsi = psi.grad(Xn)
        xi = penalty_coefficient(psi.value(Xn), gamma)
        curvature = psi.hess(Xn) + gamma * gpsi[:, :, None] * gpsi[:, None, :]
        forward = eye - dt * (f.jac_x(Xn, U) - xi[:, None, None] * curvature)
        rows = steps * n
        entries = [
            _block_entries(forward, rows, layout.x_cols(steps + 1)),
            _block_entries(np.broadcast_to(-eye, (N, n, n)), rows, layout.x_cols(steps)),
            _block_entries(-dt * f.jac_u(Xn, U), rows, layout.u_cols(steps)),
        ]
        return _assemble((N * n, layout.n_vars), entries)

    def ineq(z):
        X, U = layout.states(z), layout.controls(z)
        return np.concatenate([h.value(X[:-1], U) - delta, _c0_rows(problem, X[0])])

    def ineq_jacobian(z):
        X, U = layout.states(z), layout.controls(z)
        entries = [
            _block_entries(h.grad_x(X[:-1], U)[:, None, :], steps, layout.x_cols(steps)),
            _block_entries(h.grad_u(X[:-1], U)[:, None, :], steps, layout.u_cols(steps)),
        ]
        entries += _c0_entries(problem, layout, z, N)
        return _assemble((layout.n_ineq, layout.n_vars), entries)

    lb, ub = _start_bounds(problem, layout)
    logger.info("Transcribed %s in penalty mode: %d variables, %d equalities, %d inequalities",
                problem.name, layout.n_vars, layout.n_eq, layout.n_ineq)
    return NlpProblem(
        layout.n_vars, objective, gradient, eq, eq_jacobian, ineq, ineq_jacobian,
        n_eq=layout.n_eq, n_ineq=layout.n_ineq, lb=lb, ub=ub, layout=layout, config=cfg,
        name=f'{problem.name}-penalty',
    )


def transcribe_complementarity(problem, cfg):
    """Explicit-Euler discretization with the normal-cone slack v as a variable.

    Inequality blocks, in order: state ψ(x_j) (j = 0..N), mixed h(x_j,u_j),
    slack_sign −v_j, complementarity −v_jψ(x_j) − ε, cap v_j²|∇ψ(x_j)|² − ρ², c0.
    """
    if cfg.mode != 'complementarity':
        raise InvalidConfigurationError("transcribe_complementarity needs a complementarity-mode configuration")
    N, n, m = cfg.N, problem.n, problem.m
    dt, eps = 1.0 / N, float(cfg.comp_relax)
    rho = float(problem.rho if cfg.rho is None else cfg.rho)
    layout = VariableLayout(
        N, n, m, True, [('dynamics', N * n)],
        [('state', N + 1), ('mixed', N), ('slack_sign', N), ('complementarity', N), ('cap', N),
         ('c0', len(problem.c0))],
    )
    blocks = layout.ineq_blocks
    t = Grid(N).nodes
    f, psi, h, g = problem.f, problem.psi, problem.h, problem.g
    eye = np.eye(n)
    steps = np.arange(N)
    nodes = np.arange(N + 1)

    def objective(z):
        X, U = layout.states(z), layout.controls(z)
        if problem.L is not None:
            return _running_cost(problem, layout, t, X, U, dt)
        return float(g.value(X[N]))

    def gradient(z):
        X, U = layout.states(z), layout.controls(z)
        grad = np.zeros(layout.n_vars)
        if problem.L is not None:
            _running_cost_gradient(problem, layout, grad, t, X, U, dt)
        else:
            grad[layout.x_cols(N):layout.x_cols(N) + n] = g.grad(X[N])
        return grad

    def eq(z):
        X, U, V = layout.states(z), layout.controls(z), layout.slacks(z)
        Xc = X[:-1]
        return (X[1:] - Xc - dt * (f.value(Xc, U) - V[:, None] * psi.grad(Xc))).ravel()

    def eq_jacobian(z):
        X, U, V = layout.states(z), layout.controls(z), layout.slacks(z)
        Xc = X[:-1]
        rows = steps * n
        current = -eye - dt * (f.jac_x(Xc, U) - V[:, None, None] * psi.hess(Xc))
        entries = [
            _block_entries(np.broadcast_to(eye, (N, n, n)), rows, layout.x_cols(steps + 1)),
            _block_entries(current, rows, layout.x_cols(steps)),
            _block_entries(-dt * f.jac_u(Xc, U), rows, layout.u_cols(steps)),
            _block_entries(dt * psi.grad(Xc)[:, :, None], rows, layout.v_cols(steps)),
        ]
        return _assemble((N * n, layout.n_vars), entries)

    def ineq(z):
        X, U, V = layout.states(z), layout.controls(z), layout.slacks(z)
        Xc = X[:-1]
        psi_c = psi.value(Xc)
        grad_sq = np.sum(psi.grad(Xc) ** 2, axis=-1)
        return np.concatenate([
            psi.value(X),
            h.value(Xc, U),
            -V,
            -V * psi_c - eps,
            V ** 2 * grad_sq - rho ** 2,
            _c0_rows(problem, X[0]),
        ])

    def ineq_jacobian(z):
        X, U, V = layout.states(z), layout.controls(z), layout.slacks(z)
        Xc = X[:-1]
        gpsi_all = psi.grad(X)
        gpsi = gpsi_all[:-1]
        psi_c = psi.value(Xc)
        cap_x = 2.0 * (V ** 2)[:, None] * np.einsum('kij,kj->ki', psi.hess(Xc), gpsi)
        row = lambda name, idx: blocks[name].start + idx
        entries = [
            _block_entries(gpsi_all[:, None, :], row('state', nodes), layout.x_cols(nodes)),
            _block_entries(h.grad_x(Xc, U)[:, None, :], row('mixed', steps), layout.x_cols(steps)),
            _block_entries(h.grad_u(Xc, U)[:, None, :], row('mixed', steps), layout.u_cols(steps)),
            _block_entries(np.full((N, 1, 1), -1.0), row('slack_sign', steps), layout.v_cols(steps)),
            _block_entries((-V[:, None] * gpsi)[:, None, :], row('complementarity', steps), layout.x_cols(steps)),
            _block_entries(-psi_c[:, None, None], row('complementarity', steps), layout.v_cols(steps)),
            _block_entries(cap_x[:, None, :], row('cap', steps), layout.x_cols(steps)),
            _block_entries((2.0 * V * np.sum(gpsi ** 2, axis=-1))[:, None, None], row('cap', steps), layout.v_cols(steps)),
        ]
        entries += _c0_entries(problem, layout, z, blocks['c0'].start)
        return _assemble((layout.n_ineq, layout.n_vars), entries)

    lb, ub = _start_bounds(problem, layout)
    logger.info("Transcribed %s in complementarity mode (eps=%g): %d variables, %d equalities, %d inequalities",
                problem.name, eps, layout.n_vars, layout.n_eq, layout.n_ineq)
    return NlpProblem(
        layout.n_vars, objective, gradient, eq, eq_jacobian, ineq, ineq_jacobian,
        n_eq=layout.n_eq, n_ineq=layout.n_ineq, lb=lb, ub=ub, layout=layout, config=cfg,
        name=f'{problem.name}-complementarity',
    )


def transcribe(problem, cfg):
    if cfg.mode == 'penalty':
        return transcribe_penalty(problem, cfg)
    return transcribe_complementarity(problem, cfg)


def extract_trajectory(nlp, z):
    """Inverse of the layout map."""
    layout = nlp.layout
    z = np.asarray(z, dtype=float)
    if z.shape != (layout.n_vars,):
        raise DimensionMismatchError(f"expected z of length {layout.n_vars}, got {z.shape}")
    slacks = layout.slacks(z)
    if slacks is not None and slacks.min() < -1e-12:
        logger.warning("Slack variables below zero (min %.3e) in %s", slacks.min(), nlp.name)
    return StateTrajectory(Grid(layout.N), layout.states(z), layout.controls(z),
                           None if slacks is None else slacks.copy())


def initial_guess(nlp, traj):
    """Flatten a trajectory into a start vector for ``nlp``; slacks default to zero."""
    return nlp.layout.flatten(traj)
