import numpy as np
from django.test import SimpleTestCase

from sweeps import catalog
from sweeps.exceptions import InvalidConfigurationError
from sweeps.problem import check_assumptions
from sweeps.simulation import (
    ConvergenceTable,
    compute_delta,
    convergence_study,
    penalty_coefficient,
    project_onto_C,
    simulate_catchup,
    simulate_penalty,
)
from sweeps.trajectory import ControlSignal, Grid


def turning_control(N):
    """(0, 2) up to t = 1/2, then (2, 0)."""
    values = np.zeros((N, 2))
    values[: N // 2, 1] = 2.0
    values[N // 2:, 0] = 2.0
    return ControlSignal(Grid(N), values)


def turning_solution(t):
    """Exact sweep on the unit disk under ``turning_control``."""
    t = np.asarray(t, dtype=float)
    theta = 2.0 * np.arctan(np.exp(-2.0 * (t - 0.5)))
    sliding = np.stack([np.cos(theta), np.sin(theta)], axis=-1)
    rising = np.stack([np.zeros_like(t), 2.0 * t], axis=-1)
    return np.where((t < 0.5)[:, None], rising, sliding)


class ProjectionTests(SimpleTestCase):
    def test_disk_projection_matches_radial_scaling(self):
        problem = catalog.get('disk-push').spec
        rng = np.random.default_rng(0)
        angles = rng.uniform(0.0, 2.0 * np.pi, 500)
        radii = rng.uniform(1.0, 3.0, 500)
        for angle, radius in zip(angles, radii):
            x = radius * np.array([np.cos(angle), np.sin(angle)])
            np.testing.assert_allclose(project_onto_C(problem, x), x / np.linalg.norm(x), atol=1e-9)

    def test_points_near_the_boundary(self):
        problem = catalog.get('disk-push').spec
        points = [[0.04, 1.0000000000000002], [0.3965, -0.9443], [1.0 + 1e-9, 0.0], [-0.6, 0.8 + 1e-11]]
        for x in np.array(points):
            with self.subTest(x=x.tolist()):
                y = project_onto_C(problem, x)
                self.assertLessEqual(abs(float(problem.psi.value(y))), 1e-12)
                np.testing.assert_allclose(y, x / np.linalg.norm(x), atol=1e-12)

    def test_ellipse_axis_points(self):
        problem = catalog.get('ellipse-steer').spec
        for a in (2.5, -3.0, 5.0):
            np.testing.assert_allclose(project_onto_C(problem, [a, 0.0]), [np.sign(a) * 2.0, 0.0], atol=1e-9)
        for b in (1.5, -2.0, 4.0):
            np.testing.assert_allclose(project_onto_C(problem, [0.0, b]), [0.0, np.sign(b)], atol=1e-9)

    def test_points_inside_are_fixed(self):
        problem = catalog.get('ellipse-steer').spec
        x = np.array([1.0, 0.3])
        projected = project_onto_C(problem, x)
        np.testing.assert_array_equal(projected, x)
        self.assertIsNot(projected, x)

    def test_projection_satisfies_normal_condition(self):
        problem = catalog.get('ellipse-steer').spec
        x = np.array([3.0, 2.0])
        y = project_onto_C(problem, x)
        self.assertLessEqual(abs(float(problem.psi.value(y))), 1e-10)
        gradient = problem.psi.grad(y)
        residual = x - y
        # x − y is a non-negative multiple of the outward normal
        cross = residual[0] * gradient[1] - residual[1] * gradient[0]
        self.assertLess(abs(cross), 1e-8)
        self.assertGreater(residual @ gradient, 0.0)


class CatchupTests(SimpleTestCase):
    def test_disk_push_reference_is_reproduced(self):
        entry = catalog.get('disk-push')
        control = ControlSignal.constant(Grid(100), [2.0, 0.0])
        traj = simulate_catchup(entry.spec, control)
        np.testing.assert_allclose(traj.states, entry.reference.state(Grid(100).nodes), atol=1e-12)
        self.assertLessEqual(traj.feasibility(entry.spec)['max_psi'], 1e-9)

    def test_interval_reference_is_reproduced(self):
        entry = catalog.get('interval-1d')
        traj = simulate_catchup(entry.spec, ControlSignal.constant(Grid(50), [1.0]))
        np.testing.assert_allclose(traj.states, entry.reference.state(Grid(50).nodes), atol=1e-12)

    def test_first_order_convergence_on_sliding_arc(self):
        problem = catalog.get('disk-push').spec
        errors = []
        for N in (50, 100, 200, 400):
            traj = simulate_catchup(problem, turning_control(N))
            exact = turning_solution(Grid(N).nodes)
            errors.append(float(np.max(np.linalg.norm(traj.states - exact, axis=1))))
        for coarse, fine in zip(errors, errors[1:]):
            self.assertGreaterEqual(coarse / fine, 1.3)
        self.assertLessEqual(errors[-1], 0.01)

    def test_start_must_match_anchor(self):
        problem = catalog.get('disk-push').spec
        control = ControlSignal.constant(Grid(10), [0.0, 0.0])
        with self.assertRaises(InvalidConfigurationError):
            simulate_catchup(problem, control, x0=[0.1, 0.0])

    def test_control_dimension_is_checked(self):
        problem = catalog.get('disk-push').spec
        with self.assertRaises(InvalidConfigurationError):
            simulate_catchup(problem, ControlSignal.constant(Grid(10), [1.0]))


class PenaltyTests(SimpleTestCase):
    def test_coefficient_is_capped(self):
        self.assertTrue(np.isfinite(penalty_coefficient(1e6, 100.0)))
        self.assertAlmostEqual(float(penalty_coefficient(0.0, 5.0)), 5.0)

    def test_interior_motion_is_unaffected(self):
        entry = catalog.get('interior-classical')
        traj = simulate_penalty(entry.spec, ControlSignal.constant(Grid(20), [1.0, 0.0]), gamma=10.0, substeps=5)
        np.testing.assert_allclose(traj.states, entry.reference.state(Grid(20).nodes), atol=1e-9)

    def test_gap_shrinks_as_gamma_grows(self):
        problem = catalog.get('disk-push').spec
        control = ControlSignal.constant(Grid(400), [2.0, 0.0])
        reference = simulate_catchup(problem, control)
        gaps = [
            simulate_penalty(problem, control, gamma, substeps=10).sup_distance(reference)
            for gamma in (25.0, 50.0, 100.0, 200.0)
        ]
        for coarse, fine in zip(gaps, gaps[1:]):
            self.assertLess(fine, coarse)
        self.assertLessEqual(gaps[-1], 0.05)

    def test_gamma_below_admissible_bound(self):
        problem = catalog.get('disk-push').spec
        report = check_assumptions(problem, sample_budget=200, seed=0)
        control = ControlSignal.constant(Grid(10), [2.0, 0.0])
        with self.assertRaises(InvalidConfigurationError):
            simulate_penalty(problem, control, gamma=1.0, report=report)
        with self.assertRaises(InvalidConfigurationError):
            simulate_penalty(problem, control, gamma=-1.0)

    def test_substeps_must_be_positive(self):
        problem = catalog.get('disk-push').spec
        with self.assertRaises(InvalidConfigurationError):
            simulate_penalty(problem, ControlSignal.constant(Grid(10), [2.0, 0.0]), 50.0, substeps=0)

    def test_delta_is_negative_inside_the_control_ball(self):
        problem = catalog.get('disk-push').spec
        delta = compute_delta(problem, ControlSignal.constant(Grid(20), [1.0, 0.0]), 50.0, substeps=2)
        self.assertAlmostEqual(delta, -3.0)


class ConvergenceStudyTests(SimpleTestCase):
    def test_table_over_gammas_and_grids(self):
        problem = catalog.get('disk-push').spec
        table = convergence_study(problem, [2.0, 0.0], [25.0, 100.0], [50, 100], substeps=5)
        self.assertEqual(len(table.rows), 4)
        self.assertEqual(table.gammas, [25.0, 100.0])
        self.assertEqual(table.grids, [50, 100])
        self.assertTrue(table.monotone)
        summary = table.summary()
        self.assertTrue(summary['monotone'])
        self.assertEqual(set(summary['gamma_rates']), {'50', '100'})

    def test_gammas_must_increase(self):
        problem = catalog.get('disk-push').spec
        with self.assertRaises(InvalidConfigurationError):
            convergence_study(problem, [2.0, 0.0], [100.0, 25.0], [50])
        with self.assertRaises(InvalidConfigurationError):
            convergence_study(problem, [2.0, 0.0], [], [50])

    def test_flat_gaps_are_not_monotone(self):
        table = ConvergenceTable((
            {'gamma': 10.0, 'N': 10, 'gap': 0.0},
            {'gamma': 20.0, 'N': 10, 'gap': 0.0},
        ))
        self.assertFalse(table.monotone)
        self.assertEqual(table.gamma_rates(), {10: [None]})
        with self.assertRaises(KeyError):
            table.gap(30.0, 10)
