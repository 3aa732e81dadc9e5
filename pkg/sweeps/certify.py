"""Discrete necessary-condition certificates and their residual reports.

Multipliers are read off converged NLP solutions and checked against the
optimality systems of the regular case (penalty route, measure-driven
adjoint) and of the non-regular case (complementarity route, charges
represented by grid atoms).
"""
import logging
import time
from dataclasses import dataclass, field, fields, replace
from typing import Optional

import numpy as np
from scipy.optimize import nnls

from .conf import resolve, sweep_setting
from .exceptions import (
    DegenerateNormalizationError,
    DimensionMismatchError,
    InvalidConfigurationError,
    NotConvergedError,
    StageIncompleteError,
)
from .simulation import penalty_coefficient
from .transcription import extract_trajectory, transcribe_complementarity, transcribe_penalty

logger = logging.getLogger(__name__)

NORMALIZATION_FLOOR = 1e-14
SPIKE_FLOOR = 1e-12


@dataclass(frozen=True)
class ToleranceProfile:
    adjoint: float = 1e-4
    boundary: float = 1e-6
    condition5: float = 1e-4
    stationarity: float = 1e-3
    complementarity: float = 1e-3
    transversality: float = 1e-8
    nontriviality: float = 0.1
    support: float = 1e-8
    active: float = 1e-6
    maximum_gap: Optional[float] = None

    @classmethod
    def from_settings(cls, overrides=None):
        values = {**sweep_setting('TOLERANCES'), **(overrides or {})}
        known = {f.name for f in fields(cls)}
        unknown = set(values) - known
        if unknown:
            raise InvalidConfigurationError(f"Unknown tolerance keys: {', '.join(sorted(unknown))}")
        return cls(**values)

    def to_dict(self):
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass(frozen=True)
class ConditionResult:
    """One condition of a residual report.

    ``structural`` marks conditions that extraction satisfies by
    construction; they guard hand-built or edited certificates only.
    """
    condition_id: str
    residual: float
    tolerance: float
    passed: bool
    worst_node: Optional[int] = None
    sense: str = 'max'
    structural: bool = False

    def to_dict(self):
        return {
            'condition_id': self.condition_id,
            'residual': self.residual,
            'tolerance': self.tolerance,
            'pass': self.passed,
            'worst_node': self.worst_node,
            'structural': self.structural,
        }


def _upper(condition_id, values, tolerance, offset=0, structural=False):
    """Max of ``values`` against an upper tolerance; worst node shifted by ``offset``."""
    values = np.asarray(values, dtype=float).reshape(-1)
    if values.size == 0:
        return ConditionResult(condition_id, 0.0, float(tolerance), True, structural=structural)
    worst = int(np.nanargmax(values)) if np.any(np.isfinite(values)) else 0
    residual = float(np.max(values)) if np.all(np.isfinite(values)) else float('inf')
    return ConditionResult(condition_id, residual, float(tolerance), bool(residual <= tolerance), worst + offset,
                           structural=structural)


def _lower(condition_id, value, tolerance):
    value = float(value)
    return ConditionResult(condition_id, value, float(tolerance), bool(value > tolerance), sense='min')


@dataclass(frozen=True)
class ResidualReport:
    theorem: str
    conditions: tuple
    banners: tuple = ()
    diagnostics: dict = field(default_factory=dict)

    @property
    def passed(self):
        return all(c.passed for c in self.conditions)

    def failed(self):
        return [c.condition_id for c in self.conditions if not c.passed]

    def structural(self):
        return [c.condition_id for c in self.conditions if c.structural]

    def __getitem__(self, condition_id):
        for condition in self.conditions:
            if condition.condition_id == condition_id:
                return condition
        raise KeyError(condition_id)

    def to_dict(self):
        return {
            'theorem': self.theorem,
            'pass': self.passed,
            'banners': list(self.banners),
            'conditions': [c.to_dict() for c in self.conditions],
            'diagnostics': self.diagnostics,
        }

    @classmethod
    def from_dict(cls, data):
        conditions = tuple(
            ConditionResult(
                c['condition_id'],
                float('inf') if c['residual'] is None else float(c['residual']),
                float('inf') if c['tolerance'] is None else float(c['tolerance']),
                bool(c['pass']),
                c.get('worst_node'),
                structural=bool(c.get('structural', False)),
            )
            for c in data['conditions']
        )
        return cls(data['theorem'], conditions, tuple(data.get('banners', ())), data.get('diagnostics', {}))

    def table(self):
        """Rows for a condition-by-condition printout."""
        return [
            (c.condition_id, c.residual, c.tolerance, 'pass' if c.passed else 'FAIL',
             '' if c.worst_node is None else c.worst_node)
            for c in self.conditions
        ]


def _node_records(length, **arrays):
    records = []
    for j in range(length):
        record = {'index': j}
        for name, values in arrays.items():
            record[name] = values[j].tolist() if j < len(values) else None
        records.append(record)
    return records


def _from_records(records, name):
    values = [r[name] for r in records if r.get(name) is not None]
    return np.asarray(values, dtype=float)


@dataclass(frozen=True)
class RegularCertificate:
    """Multipliers of the regular optimality system on the grid.

    ``p`` has N+1 rows, ``nu`` one entry per interval, ``xi`` and ``eta``
    one entry per node. ``xi`` is the penalty factor γe^{γψ} and stays
    fixed under scaling. ``eta`` holds the atoms of the measure,
    η_j = ⟨p_{j−1}, ∇ψ(x_j)⟩·Δtγξ_j, and scales with λ0, ``p`` and ``nu``;
    normalization makes λ0 + max|p| + Σ|η| equal one.
    """
    lambda0: float
    p: np.ndarray
    nu: np.ndarray
    xi: np.ndarray
    eta: np.ndarray
    contact_band: float = 0.0
    gamma: Optional[float] = None

    def __post_init__(self):
        for name in ('p', 'nu', 'xi', 'eta'):
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def N(self):
        return self.nu.size

    @property
    def kappa_obs(self):
        return float(np.max(np.abs(self.nu) / (self.lambda0 + np.linalg.norm(self.p[:-1], axis=1)), initial=0.0))

    def scale(self):
        return self.lambda0 + float(np.max(np.linalg.norm(self.p, axis=1))) + float(np.sum(np.abs(self.eta)))

    def scaled(self, factor):
        return replace(self, lambda0=factor * self.lambda0, p=factor * self.p, nu=factor * self.nu,
                       eta=factor * self.eta)

    def normalized(self):
        s = self.scale()
        if s < NORMALIZATION_FLOOR:
            raise DegenerateNormalizationError(f"certificate scale {s:.3e} is too small to normalize")
        return self.scaled(1.0 / s)

    def to_dict(self):
        return {
            'kind': 'regular',
            'lambda0': self.lambda0,
            'gamma': self.gamma,
            'contact_band': self.contact_band,
            'kappa_obs': self.kappa_obs,
            'nodes': _node_records(self.p.shape[0], p=self.p, nu=self.nu, xi=self.xi, eta=self.eta),
        }

    @classmethod
    def from_dict(cls, data):
        nodes = sorted(data['nodes'], key=lambda r: r['index'])
        return cls(
            lambda0=float(data['lambda0']),
            p=_from_records(nodes, 'p'),
            nu=_from_records(nodes, 'nu'),
            xi=_from_records(nodes, 'xi'),
            eta=_from_records(nodes, 'eta'),
            contact_band=float(data.get('contact_band', 0.0)),
            gamma=data.get('gamma'),
        )


def contact_band(gamma, tolerances):
    """Width of the band below ∂C outside which the penalty factor stays under the support tolerance."""
    if gamma is None:
        return tolerances.active
    return max(tolerances.active, (2.0 * np.log(gamma) - np.log(tolerances.support)) / gamma)


def _require_converged(solve):
    if not solve.converged:
        raise NotConvergedError(f"cannot extract a certificate from a solve with status {solve.status!r}")


def extract_regular(problem, cfg, solve, gamma=None, tolerances=None):
    if cfg.mode != 'penalty':
        raise InvalidConfigurationError("regular certificates come from penalty-mode solves")
    _require_converged(solve)
    tolerances = tolerances or ToleranceProfile.from_settings()
    gamma = float(cfg.gamma if gamma is None else gamma)
    nlp = transcribe_penalty(problem, cfg)
    layout = nlp.layout
    traj = extract_trajectory(nlp, solve.z_star)
    N, n, dt = cfg.N, problem.n, 1.0 / cfg.N
    lambda0 = 1.0
    p = np.vstack([
        solve.mu_eq[layout.eq_blocks['dynamics']].reshape(N, n),
        -lambda0 * problem.g.grad(traj.states[-1])[None, :],
    ])
    nu = solve.mu_ineq[layout.ineq_blocks['mixed']] / dt
    xi = penalty_coefficient(problem.psi.value(traj.states), gamma)
    eta = np.zeros(N + 1)
    eta[1:] = np.einsum('ki,ki->k', p[:-1], problem.psi.grad(traj.states[1:])) * dt * gamma * xi[1:]
    raw = RegularCertificate(lambda0, p, nu, xi, eta, contact_band(gamma, tolerances), gamma)
    certificate = raw.normalized()
    logger.info("Extracted regular certificate for %s (N=%d, gamma=%g, kappa_obs=%.4g)",
                problem.name, N, gamma, certificate.kappa_obs)
    return certificate


def _check_regular_dimensions(problem, traj, cert):
    traj.check_dimensions(problem)
    N, n = traj.grid.N, problem.n
    expected = {'p': (N + 1, n), 'nu': (N,), 'xi': (N + 1,), 'eta': (N + 1,)}
    for name, shape in expected.items():
        if getattr(cert, name).shape != shape:
            raise DimensionMismatchError(f"certificate field {name} has shape {getattr(cert, name).shape}, expected {shape}")


def _cone_distance(problem, x0, q, active_tol):
    """Distance from q to the normal cone of C0 at x0, spanned by the active c0 gradients."""
    if problem.singleton_start:
        return 0.0
    active = [c.grad(x0) for c in problem.c0 if float(c.value(x0)) >= -active_tol]
    if not active:
        return float(np.linalg.norm(q))
    _, residual = nnls(np.column_stack(active), q)
    return float(residual)


def _maximum_gaps(problem, traj, cert, draws, ascent_steps, seed):
    """Sampled sup of H(u) − H(u_j) over Ω(x_j), with H(u) = ⟨p_j, f(x_{j+1},u)⟩ − λ0 L."""
    rng = np.random.default_rng(seed)
    X, U, t = traj.states, traj.controls, traj.grid.nodes
    N = traj.grid.N
    bound = 2.0 * (1.0 + float(np.max(np.abs(U))))
    gaps = np.zeros(N)
    speed = 0.0
    for j in range(N):
        x_left, x_right, pj = X[j], X[j + 1], cert.p[j]

        def hamiltonian(u):
            value = problem.f.value(x_right, u) @ pj
            if problem.L is not None:
                value = value - cert.lambda0 * problem.L.value(t[j], x_left, u)
            return value

        def admissible(u):
            return problem.h.value(x_left, u) <= 0.0

        base = float(hamiltonian(U[j]))
        best_u, best = U[j], base
        samples = rng.uniform(-bound, bound, size=(draws, problem.m))
        samples = samples[admissible(samples)]
        if samples.size:
            values = hamiltonian(samples)
            i = int(np.argmax(values))
            if values[i] > best:
                best_u, best = samples[i], float(values[i])
            speed = max(speed, float(np.max(np.linalg.norm(problem.f.value(x_right, samples), axis=1))))
        speed = max(speed, float(np.linalg.norm(problem.f.value(x_right, U[j]))))
        step = 0.1 * bound
        for _ in range(ascent_steps):
            direction = problem.f.jac_u(x_right, best_u).T @ pj
            if problem.L is not None:
                direction = direction - cert.lambda0 * problem.L.grad_u(t[j], x_left, best_u)
            norm = np.linalg.norm(direction)
            if norm == 0.0:
                break
            trial = best_u + step * direction / norm
            value = float(hamiltonian(trial))
            if admissible(trial) and value > best:
                best_u, best = trial, value
            else:
                step *= 0.5
        gaps[j] = best - base
    return gaps, speed


def verify_regular(problem, traj, cert, tolerances=None, seed=0, draws=None, ascent_steps=None):
    start_time = time.time()
    tolerances = tolerances or ToleranceProfile.from_settings()
    _check_regular_dimensions(problem, traj, cert)
    draws = resolve(draws, 'MAXIMUM_DRAWS')
    ascent_steps = resolve(ascent_steps, 'MAXIMUM_ASCENT_STEPS')
    N, dt = traj.grid.N, traj.grid.dt
    X, U, t = traj.states, traj.controls, traj.grid.nodes
    lam0, p, nu, xi, eta = cert.lambda0, cert.p, cert.nu, cert.xi, cert.eta
    psi, f, h = problem.psi, problem.f, problem.h

    nontriviality = cert.scale()

    Xn = X[1:]
    gpsi = psi.grad(Xn)
    residual = (p[:-1] - p[1:]
                - dt * np.einsum('kij,ki->kj', f.jac_x(Xn, U), p[:-1])
                + dt * xi[1:, None] * np.einsum('kij,kj->ki', psi.hess(Xn), p[:-1])
                + eta[1:, None] * gpsi)
    if N > 1:
        inner = slice(1, N)
        residual[:-1] += dt * nu[inner, None] * h.grad_x(X[inner], U[inner])
        if problem.L is not None:
            residual[:-1] += lam0 * dt * problem.L.grad_x(t[inner], X[inner], U[inner])
    adjoint = np.linalg.norm(residual, axis=1)

    terminal = float(np.linalg.norm(p[N] + lam0 * problem.g.grad(X[N])))
    q0 = p[0] - dt * nu[0] * h.grad_x(X[0], U[0])
    if problem.L is not None:
        q0 = q0 - dt * lam0 * problem.L.grad_x(t[0], X[0], U[0])
    initial = _cone_distance(problem, X[0], q0, tolerances.active)

    gaps, speed = _maximum_gaps(problem, traj, cert, draws, ascent_steps, seed)
    gap_tol = tolerances.maximum_gap
    if gap_tol is None:
        gap_tol = 1e-4 * (1.0 + float(np.max(np.abs(p)))) * speed

    stationarity = nu[:, None] * h.grad_u(X[:-1], U) - np.einsum('kij,ki->kj', f.jac_u(Xn, U), p[:-1])
    if problem.L is not None:
        stationarity += lam0 * problem.L.grad_u(t[:-1], X[:-1], U)

    off_band = psi.value(X) < -cert.contact_band
    kappa = cert.kappa_obs

    conditions = (
        _lower('nontriviality', nontriviality, tolerances.nontriviality),
        _upper('adjoint', adjoint, tolerances.adjoint),
        _upper('terminal', [terminal], tolerances.boundary, offset=N, structural=True),
        _upper('initial', [initial], tolerances.boundary),
        _upper('maximum', gaps, gap_tol),
        _upper('condition5', np.linalg.norm(stationarity, axis=1), tolerances.condition5),
        ConditionResult('condition6', kappa, float('inf'), bool(np.isfinite(kappa))),
        _upper('eta_support', np.where(off_band, np.abs(eta), 0.0), tolerances.support),
        _upper('xi_support', np.where(off_band, xi, 0.0), tolerances.support),
    )
    report = ResidualReport(
        'regular',
        conditions,
        diagnostics={
            'adjoint_l1': float(np.sum(adjoint)),
            'kappa_obs': kappa,
            'contact_band': cert.contact_band,
            'contact_nodes': int(np.count_nonzero(~off_band)),
            'eta_total': float(np.sum(eta)),
            'normalization': nontriviality,
            'sampled_speed': speed,
        },
    )
    log = logger.info if report.passed else logger.warning
    log("Regular verification of %s completed in %.2f seconds (%s)", problem.name, time.time() - start_time,
        'all conditions pass' if report.passed else 'failed: ' + ', '.join(report.failed()))
    return report


@dataclass(frozen=True)
class NonRegularCertificate:
    """Multipliers of the non-regular optimality system on the grid.

    Densities ``z1``, ``z3``, ``w`` and ``cap`` live on intervals (N entries),
    ``z2`` on nodes (N+1). Atoms ``zeta1``, ``zeta3`` and ``varpi`` sit on
    nodes 0..N−1 and ``zeta2`` on nodes 0..N. ``lam`` and ``alpha`` have N+1 rows.
    """
    lambda0: float
    z1: np.ndarray
    z2: np.ndarray
    z3: np.ndarray
    w: np.ndarray
    zeta1: np.ndarray
    zeta2: np.ndarray
    zeta3: np.ndarray
    varpi: np.ndarray
    cap: np.ndarray
    lam: np.ndarray
    alpha: np.ndarray

    SCALED = ('z1', 'z2', 'z3', 'w', 'zeta1', 'zeta2', 'zeta3', 'varpi', 'cap', 'lam', 'alpha')

    def __post_init__(self):
        for name in self.SCALED:
            object.__setattr__(self, name, np.asarray(getattr(self, name), dtype=float))

    @property
    def N(self):
        return self.w.size

    @property
    def p(self):
        return self.lam + self.alpha

    def nontriviality(self):
        dt = 1.0 / self.N
        return (self.lambda0
                + dt * float(np.sum(np.abs(self.z2)) + np.sum(np.abs(self.z3)))
                + float(np.sum(np.abs(self.zeta2)) + np.sum(np.abs(self.zeta3)))
                + dt * float(np.sum(np.abs(self.w)))
                + float(np.sum(np.abs(self.varpi))))

    def scaled(self, factor):
        return replace(self, lambda0=factor * self.lambda0,
                       **{name: factor * getattr(self, name) for name in self.SCALED})

    def normalized(self):
        s = self.nontriviality()
        if s < NORMALIZATION_FLOOR:
            raise DegenerateNormalizationError(f"certificate scale {s:.3e} is too small to normalize")
        return self.scaled(1.0 / s)

    def to_dict(self):
        return {
            'kind': 'nonregular',
            'lambda0': self.lambda0,
            'nodes': _node_records(self.lam.shape[0], **{name: getattr(self, name) for name in self.SCALED}),
        }

    @classmethod
    def from_dict(cls, data):
        nodes = sorted(data['nodes'], key=lambda r: r['index'])
        return cls(float(data['lambda0']), **{name: _from_records(nodes, name) for name in cls.SCALED})


def split_spikes(values, factor=None, floor=SPIKE_FLOOR):
    """Split node values into a density part and isolated atoms.

    A node is an atom when its magnitude exceeds ``floor`` and ``factor``
    times the median magnitude of up to two neighbours on each side.
    """
    factor = resolve(factor, 'SPIKE_FACTOR')
    values = np.asarray(values, dtype=float)
    magnitude = np.abs(values)
    atoms = np.zeros_like(values)
    for j in range(values.size):
        neighbours = np.concatenate([magnitude[max(0, j - 2):j], magnitude[j + 1:j + 3]])
        reference = float(np.median(neighbours)) if neighbours.size else 0.0
        if magnitude[j] > floor and magnitude[j] > factor * reference:
            atoms[j] = values[j]
    return values - atoms, atoms


def extract_nonregular(problem, cfg, solve, spike_factor=None):
    if cfg.mode != 'complementarity':
        raise InvalidConfigurationError("non-regular certificates come from complementarity-mode solves")
    stage = solve.stage or {}
    if stage and stage.get('completed', 0) < stage.get('total', 0):
        raise StageIncompleteError(
            f"epsilon schedule stopped after {stage.get('completed')} of {stage.get('total')} stages"
        )
    _require_converged(solve)
    nlp = transcribe_complementarity(problem, cfg)
    layout = nlp.layout
    traj = extract_trajectory(nlp, solve.z_star)
    N, n, dt = cfg.N, problem.n, 1.0 / cfg.N
    X, U, V = traj.states, traj.controls, traj.slacks
    blocks = layout.ineq_blocks
    mu = solve.mu_ineq

    z1_part, zeta1 = split_spikes(mu[blocks['slack_sign']], spike_factor)
    z2_part, zeta2 = split_spikes(mu[blocks['state']], spike_factor)
    z3_part, zeta3 = split_spikes(mu[blocks['mixed']], spike_factor)
    d_part, d_atoms = split_spikes(mu[blocks['complementarity']], spike_factor)
    atoms = sum(int(np.count_nonzero(a)) for a in (zeta1, zeta2, zeta3, d_atoms))
    if atoms:
        logger.warning("Reassigned %d multiplier spikes of %s to atoms", atoms, problem.name)

    w = -d_part / dt
    varpi = -d_atoms
    z1 = z1_part / dt

    lam = np.zeros((N + 1, n))
    lam[:N] = -solve.mu_eq[layout.eq_blocks['dynamics']].reshape(N, n)

    gpsi = problem.psi.grad(X)
    theta = zeta2[:, None] * gpsi
    theta[:N] += zeta3[:, None] * problem.h.grad_x(X[:-1], U) + (V * varpi)[:, None] * gpsi[:N]
    tail = np.cumsum(theta[::-1], axis=0)[::-1]
    alpha = np.zeros((N + 1, n))
    alpha[:N] = -tail[1:]
    alpha[0] = -tail[0]

    raw = NonRegularCertificate(
        lambda0=1.0, z1=z1, z2=z2_part / dt, z3=z3_part / dt, w=w,
        zeta1=zeta1, zeta2=zeta2, zeta3=zeta3, varpi=varpi,
        cap=mu[blocks['cap']] / dt, lam=lam, alpha=alpha,
    )
    certificate = raw.normalized()
    logger.info("Extracted non-regular certificate for %s (N=%d, eps=%g)", problem.name, N, cfg.comp_relax)
    return certificate


def _check_nonregular_dimensions(problem, traj, cert):
    traj.check_dimensions(problem)
    N, n = traj.grid.N, problem.n
    if traj.slacks is None:
        raise DimensionMismatchError("non-regular verification needs the slack trajectory v")
    expected = {name: (N,) for name in ('z1', 'z3', 'w', 'zeta1', 'zeta3', 'varpi', 'cap')}
    expected.update({'z2': (N + 1,), 'zeta2': (N + 1,), 'lam': (N + 1, n), 'alpha': (N + 1, n)})
    for name, shape in expected.items():
        if getattr(cert, name).shape != shape:
            raise DimensionMismatchError(f"certificate field {name} has shape {getattr(cert, name).shape}, expected {shape}")


def verify_nonregular(problem, traj, cert, tolerances=None):
    start_time = time.time()
    tolerances = tolerances or ToleranceProfile.from_settings()
    _check_nonregular_dimensions(problem, traj, cert)
    N, dt = traj.grid.N, traj.grid.dt
    X, U, V, t = traj.states, traj.controls, traj.slacks, traj.grid.nodes
    psi, f, h = problem.psi, problem.f, problem.h
    lam, p, lam0 = cert.lam, cert.p, cert.lambda0
    Xc = X[:-1]

    psi_all = psi.value(X)
    psi_c = psi_all[:-1]
    gpsi_all = psi.grad(X)
    gpsi = gpsi_all[:-1]
    h_vals = h.value(Xc, U)
    h_x, h_u = h.grad_x(Xc, U), h.grad_u(Xc, U)
    grad_sq = np.sum(gpsi ** 2, axis=1)

    # (b) complementarity and atom placement
    products = np.vstack([
        np.abs(cert.z1 * V),
        np.abs(cert.z2[:-1] * psi_c),
        np.abs(cert.z3 * h_vals),
    ])
    products_full = np.append(np.max(products, axis=0), abs(cert.z2[-1] * psi_all[-1]))
    placement = np.where(np.abs(psi_all) > tolerances.active, np.abs(cert.zeta2), 0.0)
    placement[:-1] = np.maximum(placement[:-1], np.where(np.abs(h_vals) > tolerances.active, np.abs(cert.zeta3), 0.0))
    placement[:-1] = np.maximum(placement[:-1], np.where(V > tolerances.active, np.abs(cert.zeta1), 0.0))
    signs = np.vstack([
        -np.minimum(cert.z1, 0.0), -np.minimum(cert.z2[:-1], 0.0), -np.minimum(cert.z3, 0.0),
        -np.minimum(cert.zeta1, 0.0), -np.minimum(cert.zeta2[:-1], 0.0), -np.minimum(cert.zeta3, 0.0),
    ]).max(axis=0)

    # (c) costate: node j pairs p_{j-1} − p_j with the data of node j
    previous = p[:-1].copy()
    theta0 = cert.zeta2[0] * gpsi_all[0] + cert.zeta3[0] * h_x[0] + V[0] * cert.varpi[0] * gpsi_all[0]
    previous[0] = previous[0] + theta0
    costate = previous - p[1:]
    if N > 1:
        k = slice(1, N)
        Xk, Uk, Vk = X[k], U[k], V[k]
        jac = f.jac_x(Xk, Uk) - Vk[:, None, None] * psi.hess(Xk)
        gk = gpsi_all[k]
        costate[:-1] -= dt * np.einsum('kij,ki->kj', jac, lam[k])
        costate[:-1] -= dt * (cert.z2[k] + cert.w[k] * Vk)[:, None] * gk
        costate[:-1] -= dt * cert.z3[k][:, None] * h_x[k]
        costate[:-1] -= dt * (cert.cap[k] * 2.0 * Vk ** 2)[:, None] * np.einsum('kij,kj->ki', psi.hess(Xk), gk)
        if problem.L is not None:
            costate[:-1] -= lam0 * dt * problem.L.grad_x(t[k], Xk, Uk)
    costate[-1] -= dt * cert.z2[N] * gpsi_all[N]
    if problem.L is None:
        costate[-1] -= lam0 * problem.g.grad(X[N])

    s1 = np.einsum('kij,ki->kj', f.jac_u(Xc, U), lam[:-1]) + cert.z3[:, None] * h_u
    if problem.L is not None:
        s1 += lam0 * problem.L.grad_u(t[:-1], Xc, U)
    s2 = (-np.einsum('ki,ki->k', lam[:-1], gpsi) - cert.z1 + cert.w * psi_c
          + 2.0 * cert.cap * V * grad_sq)
    s3 = np.linalg.norm(cert.zeta3[:, None] * h_u, axis=1)
    s4 = np.abs(-cert.zeta1 + psi_c * cert.varpi)

    conditions = (
        _lower('nontriviality', cert.nontriviality(), tolerances.nontriviality),
        _upper('complementarity', products_full, tolerances.complementarity),
        _upper('atom_placement', placement, tolerances.complementarity),
        _upper('multiplier_signs', signs, tolerances.complementarity),
        _upper('transversality', [np.linalg.norm(lam[N])], tolerances.transversality, offset=N,
               structural=True),
        _upper('costate', np.linalg.norm(costate, axis=1), tolerances.stationarity, offset=1),
        _upper('s1', np.linalg.norm(s1, axis=1), tolerances.stationarity),
        _upper('s2', np.abs(s2), tolerances.stationarity),
        _upper('s3', s3, tolerances.stationarity),
        _upper('s4', s4, tolerances.stationarity),
    )
    report = ResidualReport(
        'nonregular',
        conditions,
        banners=(
            'closedness of the constraint image: hypothesis not verified',
            'pure-charge property of atoms: not verifiable on a finite grid',
        ),
        diagnostics={
            'atoms': {
                'zeta1': int(np.count_nonzero(cert.zeta1)),
                'zeta2': int(np.count_nonzero(cert.zeta2)),
                'zeta3': int(np.count_nonzero(cert.zeta3)),
                'varpi': int(np.count_nonzero(cert.varpi)),
            },
            'cap_multiplier_max': float(np.max(np.abs(cert.cap), initial=0.0)),
        },
    )
    log = logger.info if report.passed else logger.warning
    log("Non-regular verification of %s completed in %.2f seconds (%s)", problem.name, time.time() - start_time,
        'all conditions pass' if report.passed else 'failed: ' + ', '.join(report.failed()))
    return report
