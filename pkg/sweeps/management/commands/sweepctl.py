import csv
import glob
import logging
import os

import numpy as np
from django.core.management.base import BaseCommand, CommandError
from django.utils import timezone
from rest_framework.exceptions import ParseError

from sweeps import catalog
from sweeps.certify import (
    ToleranceProfile,
    extract_nonregular,
    extract_regular,
    verify_nonregular,
    verify_regular,
)
from sweeps.conf import sweep_setting
from sweeps.exceptions import (
    CertificateError,
    DimensionMismatchError,
    InvalidConfigurationError,
    NumericalFailure,
    ProblemDefinitionError,
    UnknownProblemError,
)
from sweeps.problem import check_assumptions, gradient_check, regularity_margin
from sweeps.routes import solve_complementarity_route, solve_penalty_route
from sweeps.serializers import RunConfigSerializer, describe_fields
from sweeps.simulation import convergence_study, simulate_catchup, simulate_penalty
from sweeps.solver import SolveResult
from sweeps.trajectory import ControlSignal, Grid, read_trajectory_csv, write_trajectory_csv
from sweeps.transcription import TranscriptionConfig, extract_trajectory, transcribe
from sweeps.utils import ensure_dir, read_json, to_jsonable, write_json

logger = logging.getLogger(__name__)

ACTIONS = ('simulate', 'solve', 'certify', 'converge', 'check')
GRADIENT_TOL = 1e-6

# returncodes
CHECKS_FAILED = 1
CONFIG_ERROR = 2
NUMERICAL_FAILURE = 3


class Command(BaseCommand):
    help = (
        "Simulate, solve, certify and study controlled sweeping processes. "
        "Config keys (JSON object) with defaults:\n" + describe_fields()
    )

    def add_arguments(self, parser):
        parser.add_argument('action', choices=ACTIONS, help="Workflow to run")
        parser.add_argument('--config', required=True, help="Path to the JSON run configuration")
        parser.add_argument('--out', help="Output directory (default: config output_dir, then a fresh run directory)")
        parser.add_argument('--seed', type=int, help="Overrides the config seed")

    def handle(self, *args, **options):
        action = options['action']
        config = self.load_config(options['config'], options.get('seed'))
        name = config['problem']
        try:
            entry = catalog.get(name)
            getattr(self, f'run_{action}')(entry, config, options.get('out'))
        except FileNotFoundError as exc:
            logger.error("%s on %s rejected: missing input %s", action, name, exc.filename)
            raise CommandError(f"Input file not found: {exc.filename}", returncode=CONFIG_ERROR)
        except (InvalidConfigurationError, DimensionMismatchError, UnknownProblemError, ProblemDefinitionError) as exc:
            logger.error("%s on %s rejected: %s", action, name, exc)
            raise CommandError(str(exc), returncode=CONFIG_ERROR)
        except (NumericalFailure, CertificateError) as exc:
            logger.error("%s on %s failed: %s", action, name, exc)
            raise CommandError(f"{type(exc).__name__}: {exc}", returncode=NUMERICAL_FAILURE)

    def load_config(self, path, seed=None):
        try:
            raw = read_json(path)
        except FileNotFoundError:
            raise CommandError(f"Config file not found: {path}", returncode=CONFIG_ERROR)
        except ParseError as exc:
            raise CommandError(f"Config file {path} is not valid JSON: {exc}", returncode=CONFIG_ERROR)
        serializer = RunConfigSerializer(data=raw)
        if not serializer.is_valid():
            errors = '; '.join(f"{field}: {' '.join(map(str, msgs))}" for field, msgs in serializer.errors.items())
            raise CommandError(f"Invalid config: {errors}", returncode=CONFIG_ERROR)
        config = dict(serializer.validated_data)
        if seed is not None:
            config['seed'] = seed
        return config

    def output_dir(self, config, out, label):
        if out or config.get('output_dir'):
            return ensure_dir(out or config['output_dir'])
        stamp = timezone.now().strftime('%Y%m%dT%H%M%S%f')
        return ensure_dir(os.path.join(sweep_setting('OUTPUT_ROOT'), f"{config['problem']}-{label}-{stamp}"))

    def control_vector(self, entry, config):
        return np.asarray(config.get('control') or np.zeros(entry.spec.m), dtype=float)

    def assumptions(self, entry, config):
        return check_assumptions(entry.spec, sample_budget=config['sample_budget'], seed=config['seed'])

    def run_simulate(self, entry, config, out):
        problem = entry.spec
        directory = self.output_dir(config, out, 'simulate')
        control = ControlSignal.constant(Grid(config['N']), self.control_vector(entry, config))
        catchup = simulate_catchup(problem, control)
        write_trajectory_csv(catchup, os.path.join(directory, 'catchup.csv'))
        summary = {'problem': problem.name, 'N': config['N'], 'catchup': catchup.feasibility(problem)}
        if config.get('gamma') is not None:
            penalized = simulate_penalty(problem, control, config['gamma'], substeps=config['substeps'],
                                         report=self.assumptions(entry, config))
            write_trajectory_csv(penalized, os.path.join(directory, 'penalty.csv'))
            summary.update({
                'gamma': config['gamma'],
                'penalty': penalized.feasibility(problem),
                'sup_gap': penalized.sup_distance(catchup),
            })
        write_json(os.path.join(directory, 'simulate.json'), summary)
        self.stdout.write(self.style.SUCCESS(f"Simulation of {problem.name} written to {directory}"))

    def run_solve(self, entry, config, out):
        problem = entry.spec
        mode = config['mode']
        control = self.control_vector(entry, config)
        if mode == 'penalty':
            if config.get('gamma') is None:
                raise InvalidConfigurationError("penalty mode needs gamma")
            route = solve_penalty_route(
                problem, config['N'], config['gamma'], delta=config['delta'], control=control,
                tol=config.get('solver_tol'), max_outer=config.get('max_outer'), substeps=config['substeps'],
                report=self.assumptions(entry, config),
            )
        else:
            route = solve_complementarity_route(
                problem, config['N'], schedule=config['epsilon_schedule'], control=control,
                tol=config.get('solver_tol'), max_outer=config.get('max_outer'),
            )
        directory = self.output_dir(config, out, mode)
        payload = route.to_dict()
        payload['feasibility'] = route.trajectory.feasibility(problem, delta=route.cfg.delta)
        if entry.reference is not None:
            payload['reference_objective'] = entry.reference.objective
        write_trajectory_csv(route.trajectory, os.path.join(directory, 'trajectory.csv'))
        write_json(os.path.join(directory, 'solve.json'), payload)
        write_json(os.path.join(directory, 'layout.json'), route.nlp.layout.to_dict())
        message = (f"{problem.name} ({mode}): status {route.solve.status}, objective {route.objective:.10g}, "
                   f"output in {directory}")
        if not route.converged:
            self.stderr.write(self.style.ERROR(message))
            raise CommandError(f"Solve did not converge (status {route.solve.status})", returncode=NUMERICAL_FAILURE)
        self.stdout.write(self.style.SUCCESS(message))

    def find_solve_dir(self, config, out):
        if out or config.get('output_dir'):
            return out or config['output_dir']
        pattern = os.path.join(sweep_setting('OUTPUT_ROOT'), f"{config['problem']}-{config['mode']}-*", 'solve.json')
        matches = sorted(glob.glob(pattern))
        if not matches:
            raise CommandError(f"No solve output found for {config['problem']} ({config['mode']})",
                               returncode=CONFIG_ERROR)
        return os.path.dirname(matches[-1])

    def run_certify(self, entry, config, out):
        directory = self.find_solve_dir(config, out)
        solve_path = os.path.join(directory, 'solve.json')
        if not os.path.exists(solve_path):
            raise CommandError(f"No solve output in {directory}; run solve first", returncode=CONFIG_ERROR)
        data = read_json(solve_path)
        problem = catalog.get(data['problem']).spec
        cfg = TranscriptionConfig(**data['config'])
        result = SolveResult.from_dict(data['result'])
        tolerances = ToleranceProfile.from_settings(config.get('tolerances'))
        traj = extract_trajectory(transcribe(problem, cfg), result.z_star)
        if cfg.mode == 'penalty':
            certificate = extract_regular(problem, cfg, result, tolerances=tolerances)
            report = verify_regular(problem, traj, certificate, tolerances, seed=config['seed'])
        else:
            certificate = extract_nonregular(problem, cfg, result)
            report = verify_nonregular(problem, traj, certificate, tolerances)
        write_json(os.path.join(directory, 'certificate.json'), certificate.to_dict())
        write_json(os.path.join(directory, 'report.json'), report.to_dict())

        self.stdout.write(f"{'condition':<18}{'residual':>14}{'tolerance':>14}  {'status':<6} worst node")
        for condition_id, residual, tolerance, status, worst in report.table():
            line = f"{condition_id:<18}{residual:>14.4e}{tolerance:>14.4e}  {status:<6} {worst}"
            self.stdout.write(self.style.SUCCESS(line) if status == 'pass' else self.style.ERROR(line))
        for banner in report.banners:
            self.stdout.write(self.style.WARNING(banner))
        if report.structural():
            self.stdout.write(f"Hold by construction for extracted certificates: {', '.join(report.structural())}")
        if not report.passed:
            raise CommandError(f"Certificate checks failed: {', '.join(report.failed())}", returncode=CHECKS_FAILED)
        self.stdout.write(self.style.SUCCESS(f"All {report.theorem} conditions pass ({directory})"))

    def run_converge(self, entry, config, out):
        problem = entry.spec
        gammas = config['gammas'] if 'gammas' in config else [g for g in [config.get('gamma')] if g is not None]
        grids = config['grids'] if 'grids' in config else [config['N']]
        table = convergence_study(problem, self.control_vector(entry, config), gammas, grids,
                                  substeps=config['substeps'], report=self.assumptions(entry, config))
        directory = self.output_dir(config, out, 'converge')
        with open(os.path.join(directory, 'convergence.csv'), 'w', newline='') as fh:
            writer = csv.writer(fh, lineterminator='\n')
            writer.writerow(['gamma', 'N', 'gap'])
            for row in table.rows:
                writer.writerow([format(row['gamma'], '.17g'), row['N'], format(row['gap'], '.17g')])
        write_json(os.path.join(directory, 'convergence.json'), {**table.summary(), 'rows': list(table.rows)})
        if not table.monotone:
            self.stderr.write(self.style.WARNING("Gaps are not strictly decreasing in gamma on every grid"))
            raise CommandError("Convergence study is not monotone", returncode=CHECKS_FAILED)
        self.stdout.write(self.style.SUCCESS(f"Convergence study of {problem.name} ({len(table.rows)} cells) in {directory}"))

    def run_check(self, entry, config, out):
        problem = entry.spec
        failures = []
        report = self.assumptions(entry, config)
        self.stdout.write(f"M_est={report.M_est:.6g} eta_est={report.eta_est:.6g} "
                          f"gamma_min={2.0 * report.M_est / report.eta_est if report.eta_est > 0 else float('inf'):.6g}")
        for violation in report.violations:
            self.stdout.write(self.style.ERROR(f"{violation.assumption}: {violation.detail} at {list(violation.witness)}"))
            failures.append(violation.assumption)
        for name in report.unverified:
            self.stdout.write(self.style.WARNING(f"{name}: not verified by sampling"))

        errors = gradient_check(problem, seed=config['seed'])
        for name, error in errors.items():
            if error > GRADIENT_TOL:
                self.stdout.write(self.style.ERROR(f"{name}: relative error {error:.3e}"))
                failures.append(name)

        if config.get('trajectory'):
            margin = regularity_margin(problem, read_trajectory_csv(config['trajectory']))
            if margin.regular:
                self.stdout.write(f"regularity margin: {margin.margin} on {margin.active_count} active nodes")
            else:
                self.stdout.write(self.style.WARNING(
                    f"mixed constraint not regular: margin {margin.margin:.3e} on {margin.active_count} active nodes"
                ))
                failures.append('regularity')

        output = out or config.get('output_dir')
        if output:
            write_json(os.path.join(ensure_dir(output), 'check.json'),
                       {'assumptions': report.to_dict(), 'gradient_errors': to_jsonable(errors), 'failures': failures})
        if failures:
            raise CommandError(f"Checks failed: {', '.join(failures)}", returncode=CHECKS_FAILED)
        self.stdout.write(self.style.SUCCESS(f"{problem.name}: all checks pass"))
