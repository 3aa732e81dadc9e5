import numpy as np
from django.test import SimpleTestCase

from sweeps import catalog
from sweeps.exceptions import DimensionMismatchError, InvalidConfigurationError
from sweeps.simulation import simulate_penalty
from sweeps.tests.helpers import tracking_cost
from sweeps.trajectory import ControlSignal, Grid, StateTrajectory
from sweeps.transcription import (
    TranscriptionConfig,
    extract_trajectory,
    initial_guess,
    transcribe,
    transcribe_complementarity,
)
from sweeps.utils import central_difference, relative_error


def random_point(nlp, seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    z = rng.uniform(-scale, scale, nlp.n_vars)
    layout = nlp.layout
    if layout.with_slack:
        z[layout.v] = rng.uniform(0.0, 1.0, layout.N)
    return z


class TranscriptionConfigTests(SimpleTestCase):
    def test_rejects_bad_values(self):
        with self.assertRaises(InvalidConfigurationError):
            TranscriptionConfig(1, 'penalty', gamma=10.0)
        with self.assertRaises(InvalidConfigurationError):
            TranscriptionConfig(10, 'collocation')
        with self.assertRaises(InvalidConfigurationError):
            TranscriptionConfig(10, 'penalty')
        with self.assertRaises(InvalidConfigurationError):
            TranscriptionConfig(10, 'complementarity', comp_relax=-1e-3)
        with self.assertRaises(InvalidConfigurationError):
            TranscriptionConfig(10, 'complementarity', rho=0.0)

    def test_with_epsilon_keeps_the_rest(self):
        cfg = TranscriptionConfig(10, 'complementarity', comp_relax=1e-2, rho=3.0)
        relaxed = cfg.with_epsilon(1e-4)
        self.assertEqual(relaxed.comp_relax, 1e-4)
        self.assertEqual(relaxed.to_dict(), {**cfg.to_dict(), 'comp_relax': 1e-4})

    def test_mode_mismatch(self):
        problem = catalog.get('disk-push').spec
        with self.assertRaises(InvalidConfigurationError):
            transcribe_complementarity(problem, TranscriptionConfig(5, 'penalty', gamma=10.0))


class LayoutTests(SimpleTestCase):
    def test_complementarity_sizes(self):
        problem = catalog.get('disk-push').spec
        nlp = transcribe(problem, TranscriptionConfig(4, 'complementarity'))
        layout = nlp.layout
        self.assertEqual(layout.n_vars, 10 + 8 + 4)
        self.assertEqual(nlp.n_eq, 8)
        self.assertEqual(nlp.n_ineq, 5 + 4 * 4)
        self.assertEqual(layout.to_dict()['variables'], {'x': [0, 10], 'u': [10, 18], 'v': [18, 22]})
        self.assertEqual(list(layout.to_dict()['inequalities']),
                         ['state', 'mixed', 'slack_sign', 'complementarity', 'cap', 'c0'])

    def test_penalty_sizes_and_start_bounds(self):
        problem = catalog.get('ellipse-steer').spec
        nlp = transcribe(problem, TranscriptionConfig(6, 'penalty', gamma=20.0))
        self.assertEqual(nlp.n_vars, 14 + 12)
        self.assertEqual(nlp.n_ineq, 6)
        np.testing.assert_array_equal(nlp.lb[:2], problem.x0)
        np.testing.assert_array_equal(nlp.ub[:2], problem.x0)
        self.assertTrue(np.all(np.isinf(nlp.lb[2:])))

    def test_extract_inverts_flatten(self):
        problem = catalog.get('disk-push').spec
        nlp = transcribe(problem, TranscriptionConfig(4, 'complementarity'))
        z = random_point(nlp, seed=3)
        traj = extract_trajectory(nlp, z)
        self.assertEqual(traj.slacks.shape, (4,))
        np.testing.assert_array_equal(initial_guess(nlp, traj), z)

    def test_wrong_length(self):
        problem = catalog.get('disk-push').spec
        nlp = transcribe(problem, TranscriptionConfig(4, 'penalty', gamma=5.0))
        with self.assertRaises(DimensionMismatchError):
            nlp.objective(np.zeros(3))
        with self.assertRaises(DimensionMismatchError):
            extract_trajectory(nlp, np.zeros(3))
        other = StateTrajectory(Grid(5), np.zeros((6, 2)), np.zeros((5, 2)))
        with self.assertRaises(DimensionMismatchError):
            initial_guess(nlp, other)


class DerivativeTests(SimpleTestCase):
    def assertJacobianMatches(self, fun, jacobian, z, tol=1e-6):
        analytic = jacobian(z)
        analytic = analytic.toarray() if hasattr(analytic, 'toarray') else np.asarray(analytic)
        self.assertLessEqual(relative_error(analytic, central_difference(fun, z)), tol)

    def configs(self):
        return [TranscriptionConfig(4, 'penalty', gamma=5.0, delta=0.1),
                TranscriptionConfig(4, 'complementarity', comp_relax=1e-3)]

    def test_jacobians_match_finite_differences(self):
        problem = catalog.get('ellipse-steer').spec
        for cfg in self.configs():
            with self.subTest(mode=cfg.mode):
                nlp = transcribe(problem, cfg)
                z = random_point(nlp, seed=1)
                self.assertJacobianMatches(nlp.objective, nlp.gradient, z)
                self.assertJacobianMatches(nlp.eq, nlp.eq_jacobian, z)
                self.assertJacobianMatches(nlp.ineq, nlp.ineq_jacobian, z)

    def test_running_cost_gradient(self):
        problem = catalog.get('interior-classical').spec.replace(L=tracking_cost([0.5, 0.0]))
        for cfg in self.configs():
            with self.subTest(mode=cfg.mode):
                nlp = transcribe(problem, cfg)
                self.assertJacobianMatches(nlp.objective, nlp.gradient, random_point(nlp, seed=2))


class ResidualTests(SimpleTestCase):
    def test_penalty_dynamics_vanish_on_implicit_euler_trajectory(self):
        problem = catalog.get('disk-push').spec
        control = ControlSignal.constant(Grid(40), [2.0, 0.0])
        traj = simulate_penalty(problem, control, 50.0, substeps=1)
        nlp = transcribe(problem, TranscriptionConfig(40, 'penalty', gamma=50.0))
        self.assertLessEqual(np.max(np.abs(nlp.eq(initial_guess(nlp, traj)))), 1e-8)

    def test_complementarity_dynamics_vanish_on_interior_motion(self):
        entry = catalog.get('interior-classical')
        grid = Grid(20)
        traj = StateTrajectory(grid, entry.reference.state(grid.nodes), entry.reference.control(grid.nodes[:-1]),
                               np.zeros(20))
        nlp = transcribe(entry.spec, TranscriptionConfig(20, 'complementarity', comp_relax=1e-4))
        z = initial_guess(nlp, traj)
        self.assertLessEqual(np.max(np.abs(nlp.eq(z))), 1e-12)
        ineq = nlp.ineq(z)
        self.assertTrue(np.all(ineq <= 0.0))
        self.assertAlmostEqual(nlp.objective(z), -1.0)

    def test_objectives_by_mode(self):
        problem = catalog.get('interior-classical').spec.replace(L=tracking_cost([0.5, 0.0]))
        grid = Grid(10)
        traj = StateTrajectory(grid, np.column_stack([grid.nodes, np.zeros(11)]), np.tile([1.0, 0.0], (10, 1)))
        penalty = transcribe(problem, TranscriptionConfig(10, 'penalty', gamma=10.0))
        complementarity = transcribe(problem, TranscriptionConfig(10, 'complementarity'))
        # g(x_N) = −1 and the tracking cost integrates to 1/8
        self.assertAlmostEqual(penalty.objective(initial_guess(penalty, traj)), -1.0 + 0.125)
        self.assertAlmostEqual(complementarity.objective(initial_guess(complementarity, traj)), 0.125)
