import numpy as np
from django.test import SimpleTestCase

from sweeps import catalog
from sweeps.catalog import quadratic_set
from sweeps.exceptions import DegenerateGradientError, DimensionMismatchError, NonFiniteValueError, ProblemDefinitionError
from sweeps.problem import (
    ScalarField,
    check_assumptions,
    gamma_lower_bound,
    gradient_check,
    normal_ray,
    regularity_margin,
)
from sweeps.tests.helpers import squared_control
from sweeps.trajectory import Grid, StateTrajectory


class ProblemSpecValidationTests(SimpleTestCase):
    def setUp(self):
        self.spec = catalog.get('disk-push').spec

    def test_origin_must_be_interior(self):
        with self.assertRaises(ProblemDefinitionError):
            self.spec.replace(psi=quadratic_set([1.0, 1.0], level=0.0))

    def test_hessian_is_required(self):
        psi = self.spec.psi
        with self.assertRaises(ProblemDefinitionError):
            self.spec.replace(psi=ScalarField(2, psi.value, psi.grad))

    def test_dimensions_must_agree(self):
        with self.assertRaises(DimensionMismatchError):
            self.spec.replace(x0=np.zeros(3))

    def test_start_must_lie_in_the_set(self):
        with self.assertRaises(ProblemDefinitionError):
            self.spec.replace(x0=np.array([2.0, 0.0]))

    def test_truncation_radius_positive(self):
        with self.assertRaises(ProblemDefinitionError):
            self.spec.replace(rho=0.0)

    def test_anchor_is_read_only(self):
        with self.assertRaises(ValueError):
            self.spec.x0[0] = 1.0


class NormalRayTests(SimpleTestCase):
    def setUp(self):
        self.spec = catalog.get('disk-push').spec

    def test_classifies_points(self):
        self.assertEqual(normal_ray(self.spec, [0.2, 0.1]).kind, 'interior')
        self.assertEqual(normal_ray(self.spec, [2.0, 0.0]).kind, 'outside')
        ray = normal_ray(self.spec, [0.0, 1.0])
        self.assertTrue(ray.is_boundary)
        np.testing.assert_allclose(ray.generator, [0.0, 2.0])

    def test_degenerate_boundary_gradient(self):
        flat = ScalarField(2, lambda x: np.sum(np.asarray(x) ** 2, axis=-1) - 1.0,
                           lambda x: np.zeros(np.shape(x)), lambda x: np.zeros(np.shape(x) + (2,)))
        with self.assertRaises(DegenerateGradientError):
            normal_ray(self.spec.replace(psi=flat), [1.0, 0.0])

    def test_tolerance_must_be_positive(self):
        with self.assertRaises(ValueError):
            normal_ray(self.spec, [0.0, 0.0], tol=0.0)


class AssumptionTests(SimpleTestCase):
    def test_catalog_entries_are_clean(self):
        for name in catalog.list_catalog():
            with self.subTest(problem=name):
                report = check_assumptions(catalog.get(name).spec, sample_budget=1000, seed=0)
                self.assertEqual(report.violations, ())
                self.assertGreater(report.M_est, 0.0)
                self.assertGreater(report.eta_est, 0.0)
                self.assertIn('H2', report.unverified)

    def test_disk_push_estimates(self):
        report = check_assumptions(catalog.get('disk-push').spec, sample_budget=1000, seed=0)
        self.assertLessEqual(report.M_est, 2.0 + 1e-12)
        self.assertGreaterEqual(report.M_est, 1.9)
        self.assertAlmostEqual(report.eta_est, 1.0, places=6)
        self.assertAlmostEqual(gamma_lower_bound(report), 2.0 * report.M_est / report.eta_est)
        self.assertAlmostEqual(report.g_lipschitz_est, 1.0)

    def test_nonconvex_set_is_reported(self):
        spec = catalog.get('disk-push').spec
        wavy = ScalarField(
            2,
            lambda x: np.sum(np.asarray(x) ** 2, axis=-1) - 1.0 + 0.5 * np.sin(3.0 * np.asarray(x)[..., 0]),
            lambda x: 2.0 * np.asarray(x) + np.stack(
                [1.5 * np.cos(3.0 * np.asarray(x)[..., 0]), np.zeros(np.shape(x)[:-1])], axis=-1),
            lambda x: np.stack([
                np.stack([2.0 - 4.5 * np.sin(3.0 * np.asarray(x)[..., 0]), np.zeros(np.shape(x)[:-1])], axis=-1),
                np.stack([np.zeros(np.shape(x)[:-1]), np.full(np.shape(x)[:-1], 2.0)], axis=-1),
            ], axis=-2),
        )
        report = check_assumptions(spec.replace(psi=wavy), sample_budget=500, seed=1)
        self.assertFalse(report.convexity_ok)
        self.assertIn('H3', [v.assumption for v in report.violations])

    def test_half_plane_is_not_coercive(self):
        spec = catalog.get('disk-push').spec
        half_plane = ScalarField(
            2,
            lambda x: np.asarray(x, dtype=float)[..., 0] - 1.0,
            lambda x: np.broadcast_to([1.0, 0.0], np.shape(x)).copy(),
            lambda x: np.zeros(np.shape(x) + (2,)),
        )
        report = check_assumptions(spec.replace(psi=half_plane), sample_budget=200, seed=0)
        self.assertFalse(report.coercivity_ok)
        self.assertTrue(report.convexity_ok)
        details = {(v.assumption, v.detail) for v in report.violations}
        self.assertIn(('H3', 'psi not coercive along this ray'), details)

    def test_budget_floor(self):
        with self.assertRaises(ValueError):
            check_assumptions(catalog.get('disk-push').spec, sample_budget=10)

    def test_deterministic_under_seed(self):
        spec = catalog.get('ellipse-steer').spec
        a = check_assumptions(spec, sample_budget=300, seed=7)
        b = check_assumptions(spec, sample_budget=300, seed=7)
        self.assertEqual(a.to_dict(), b.to_dict())


class GradientCheckTests(SimpleTestCase):
    def test_catalog_derivatives_match_finite_differences(self):
        for name in catalog.list_catalog():
            with self.subTest(problem=name):
                errors = gradient_check(catalog.get(name).spec, n_points=100, seed=0)
                for field, error in errors.items():
                    self.assertLessEqual(error, 1e-6, msg=field)

    def test_injected_defect_is_named(self):
        spec = catalog.get('disk-push').spec
        broken = ScalarField(2, spec.psi.value, lambda x: 2.1 * np.asarray(x), spec.psi.hess)
        errors = gradient_check(spec.replace(psi=broken), n_points=10, seed=0)
        self.assertGreater(errors['psi.grad'], 1e-3)
        self.assertLessEqual(errors['f.jac_x'], 1e-6)

    def test_non_finite_derivative_raises(self):
        spec = catalog.get('disk-push').spec
        broken = ScalarField(2, spec.g.value, lambda x: np.full(np.shape(x), np.nan), spec.g.hess)
        with self.assertRaises(NonFiniteValueError) as ctx:
            gradient_check(spec.replace(g=broken), n_points=3, seed=0)
        self.assertEqual(ctx.exception.field, 'g.grad')


class RegularityMarginTests(SimpleTestCase):
    def test_interval_reference_arc_has_margin_two(self):
        entry = catalog.get('interval-1d')
        grid = Grid(200)
        t = grid.nodes
        traj = StateTrajectory(grid, entry.reference.state(t), entry.reference.control(t[:-1]))
        margin = regularity_margin(entry.spec, traj)
        self.assertTrue(margin.regular)
        self.assertAlmostEqual(margin.margin, 2.0)
        self.assertEqual(margin.active_count, 200)

    def test_squared_control_is_not_regular(self):
        spec = catalog.get('interval-1d').spec.replace(h=squared_control())
        grid = Grid(20)
        traj = StateTrajectory(grid, np.full(21, 0.5), np.zeros(20))
        with self.assertLogs('sweeps.problem', level='WARNING'):
            margin = regularity_margin(spec, traj)
        self.assertFalse(margin.regular)
        self.assertLess(margin.margin, 1e-6)

    def test_no_active_nodes(self):
        spec = catalog.get('interior-classical').spec
        grid = Grid(10)
        traj = StateTrajectory(grid, np.zeros((11, 2)), np.zeros((10, 2)))
        margin = regularity_margin(spec, traj)
        self.assertIsNone(margin.margin)
        self.assertTrue(margin.regular)
