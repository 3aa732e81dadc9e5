"""Time grids, piecewise-constant controls and sampled trajectories on [0, 1]."""
import csv
import logging
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .exceptions import DimensionMismatchError, InvalidConfigurationError

logger = logging.getLogger(__name__)


@dataclass(frozen=True)
class Grid:
    """Uniform grid t_j = j/N, j = 0..N."""
    N: int

    def __post_init__(self):
        if int(self.N) != self.N or self.N < 1:
            raise InvalidConfigurationError(f"Grid needs a positive integer number of intervals, got {self.N}")
        object.__setattr__(self, 'N', int(self.N))

    @property
    def dt(self):
        return 1.0 / self.N

    @property
    def nodes(self):
        return np.arange(self.N + 1) / self.N


@dataclass(frozen=True)
class ControlSignal:
    grid: Grid
    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        if values.ndim == 1:
            values = values[:, None]
        if values.ndim != 2 or values.shape[0] != self.grid.N:
            raise DimensionMismatchError(
                f"Control needs {self.grid.N} rows (one per interval), got shape {values.shape}"
            )
        if not np.all(np.isfinite(values)):
            raise InvalidConfigurationError("Control values must be finite")
        values.setflags(write=False)
        object.__setattr__(self, 'values', values)

    @classmethod
    def constant(cls, grid, u):
        u = np.atleast_1d(np.asarray(u, dtype=float))
        return cls(grid, np.tile(u, (grid.N, 1)))

    @property
    def control_dim(self):
        return self.values.shape[1]

    def at(self, t):
        """Piecewise-constant value on [t_j, t_{j+1}); t = 1 takes the last interval."""
        idx = np.clip(np.floor(np.asarray(t, dtype=float) * self.grid.N).astype(int), 0, self.grid.N - 1)
        return self.values[idx]

    def resample(self, grid):
        if grid == self.grid:
            return self
        midpoints = (np.arange(grid.N) + 0.5) / grid.N
        return ControlSignal(grid, self.at(midpoints))


@dataclass(frozen=True)
class StateTrajectory:
    grid: Grid
    states: np.ndarray
    controls: np.ndarray
    slacks: Optional[np.ndarray] = None

    def __post_init__(self):
        states = np.array(self.states, dtype=float)
        controls = np.array(self.controls, dtype=float)
        if states.ndim == 1:
            states = states[:, None]
        if controls.ndim == 1:
            controls = controls[:, None]
        N = self.grid.N
        if states.shape[0] != N + 1 or controls.shape[0] != N:
            raise DimensionMismatchError(
                f"Trajectory on N={N} needs {N + 1} states and {N} controls, "
                f"got {states.shape[0]} and {controls.shape[0]}"
            )
        object.__setattr__(self, 'states', states)
        object.__setattr__(self, 'controls', controls)
        if self.slacks is not None:
            slacks = np.array(self.slacks, dtype=float).reshape(-1)
            if slacks.shape[0] != N:
                raise DimensionMismatchError(f"Trajectory on N={N} needs {N} slacks, got {slacks.shape[0]}")
            object.__setattr__(self, 'slacks', slacks)

    @property
    def state_dim(self):
        return self.states.shape[1]

    @property
    def control_dim(self):
        return self.controls.shape[1]

    @property
    def control(self):
        return ControlSignal(self.grid, self.controls)

    def check_dimensions(self, problem):
        if self.state_dim != problem.n or self.control_dim != problem.m:
            raise DimensionMismatchError(
                f"Trajectory has (n, m) = ({self.state_dim}, {self.control_dim}), "
                f"problem '{problem.name}' has ({problem.n}, {problem.m})"
            )

    def feasibility(self, problem, delta=0.0):
        """Constraint violations along the grid: state set, mixed constraint, slack sign."""
        self.check_dimensions(problem)
        psi = problem.psi.value(self.states)
        h = problem.h.value(self.states[:-1], self.controls)
        report = {
            'max_psi': float(np.max(psi)),
            'max_h': float(np.max(h)),
            'max_h_excess': float(max(np.max(h) - delta, 0.0)),
        }
        if self.slacks is not None:
            report['min_v'] = float(np.min(self.slacks))
            report['max_complementarity'] = float(np.max(-self.slacks * psi[:-1]))
        return report

    def sup_distance(self, other):
        if other.grid != self.grid:
            raise DimensionMismatchError("Trajectories live on different grids")
        return float(np.max(np.linalg.norm(self.states - other.states, axis=1)))


def write_trajectory_csv(traj, path):
    """Header ``t,x1..xn,u1..um,v``; the last row repeats the last control and slack."""
    n, m = traj.state_dim, traj.control_dim
    header = ['t'] + [f'x{i + 1}' for i in range(n)] + [f'u{i + 1}' for i in range(m)] + ['v']
    fmt = lambda value: format(float(value), '.17g')
    with open(path, 'w', newline='') as fh:
        writer = csv.writer(fh, lineterminator='\n')
        writer.writerow(header)
        for j, t in enumerate(traj.grid.nodes):
            k = min(j, traj.grid.N - 1)
            v = '' if traj.slacks is None else fmt(traj.slacks[k])
            writer.writerow([fmt(t)] + [fmt(x) for x in traj.states[j]] + [fmt(u) for u in traj.controls[k]] + [v])
    logger.info("Wrote trajectory with %d rows to %s", traj.grid.N + 1, path)
    return path


def read_trajectory_csv(path):
    with open(path, newline='') as fh:
        rows = list(csv.reader(fh))
    header, body = rows[0], rows[1:]
    if len(body) < 2 or header[0] != 't' or header[-1] != 'v':
        raise InvalidConfigurationError(f"{path} is not a trajectory CSV")
    n = sum(1 for name in header if name.startswith('x'))
    m = sum(1 for name in header if name.startswith('u'))
    table = np.array([[float(c) for c in row[:-1]] for row in body])
    states = table[:, 1:1 + n]
    controls = table[:-1, 1 + n:1 + n + m]
    slack_cells = [row[-1] for row in body[:-1]]
    slacks = None if all(c == '' for c in slack_cells) else np.array([float(c) for c in slack_cells])
    return StateTrajectory(Grid(len(body) - 1), states, controls, slacks)
