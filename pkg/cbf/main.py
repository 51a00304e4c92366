import argparse
import logging
import os

import numpy as np
from dotenv import load_dotenv

from cbf import catalog
from cbf.admissibility import check_admissibility
from cbf.config import MODES, load_config
from cbf.errors import BlowUpError, ConfigError, ConvergenceError
from cbf.estimates import audit_all, build_ledger, structural_checks
from cbf.forward import solve_forward
from cbf.manufacture import build_field, load_problem, manufacture, sampling_policy, write_problem
from cbf.inverse import final_solve, gradient_fraction, pressure_mismatch, recover_pressure, solve_inverse
from cbf.reports import (
    write_iterations, write_key_values, write_ledger, write_provenance, write_stability, write_verdicts,
)
from cbf.snapshots import read_trajectory, write_field, write_trajectory
from cbf.spectral import norm_l2
from cbf.stability import ERROR_COLUMNS, check_f_stability_bound, check_holder_bound, run_stability_sweep

# Load environment variables
load_dotenv()

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_BLOW_UP = 3
EXIT_NOT_CONVERGED = 4
EXIT_VERDICT = 5


def configure_logging():
    logging.basicConfig(
        format='%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        level=getattr(logging, os.getenv('CBF_LOG_LEVEL', 'INFO').upper(), logging.INFO)
    )


class CbfRunner:
    def __init__(self, config, force=False, threads=1, db=None):
        """Run one configured mode, writing results under config.output_dir."""
        self.config = config
        self.force = force
        self.threads = threads
        self.db = db
        self.run_id = None
        self.handlers = {
            'forward': self.run_forward,
            'inverse': self.run_inverse,
            'verify': self.run_verify,
            'sweep': self.run_sweep,
            'manufacture': self.run_manufacture,
        }

    @property
    def out(self):
        return self.config.output_dir

    def run(self):
        """Dispatch the mode and map failures onto exit codes."""
        mode = self.config.mode
        os.makedirs(self.out, exist_ok=True)
        write_provenance(self.out, self.config, mode)
        if self.db is not None:
            run = self.db.start_run(mode, self.out, "\n".join(self.config.resolved_lines()), self.config.seed)
            self.run_id = run.id if run is not None else None

        message = ''
        try:
            code = self.handlers[mode]()
        except BlowUpError as e:
            logger.error(f"Numerical blow-up: {e}")
            code, message = EXIT_BLOW_UP, str(e)
        except ConvergenceError as e:
            logger.error(str(e))
            code, message = EXIT_NOT_CONVERGED, str(e)
        except ValueError as e:
            logger.error(f"Invalid run input: {e}", exc_info=True)
            code, message = EXIT_CONFIG, str(e)

        if self.db is not None and self.run_id is not None:
            self.db.finish_run(self.run_id, code, message)
        logger.info(f"{mode} run finished with exit code {code}; results in {self.out}")
        return code

    def _data(self, grid):
        rng = np.random.default_rng(self.config.seed)
        data = self.config.data
        u0 = build_field(data.u0, grid, data.u0_amplitude, rng)
        f = build_field(data.f, grid, data.f_amplitude, rng)
        return u0, f, catalog.modulation(data.g, grid)

    def _registry(self, method, *args):
        if self.db is not None and self.run_id is not None:
            getattr(self.db, method)(self.run_id, *args)

    def run_forward(self):
        config = self.config
        u0, f, g = self._data(config.grid())
        trajectory = solve_forward(u0, f, g, config.params, config.T, config.nt,
                                   record=sampling_policy(config), with_rates=True)
        write_trajectory(os.path.join(self.out, 'trajectory'), trajectory, config.params.r)
        write_ledger(os.path.join(self.out, 'ledger.csv'), build_ledger(trajectory, f, g, config.params))
        return EXIT_OK

    def run_verify(self):
        config = self.config
        if config.data.trajectory:
            trajectory = read_trajectory(config.data.trajectory)
            u0, f, g = self._data(trajectory.grid)
        else:
            u0, f, g = self._data(config.grid())
            trajectory = solve_forward(u0, f, g, config.params, config.T, config.nt,
                                       record=sampling_policy(config), with_rates=True)
        ledger = build_ledger(trajectory, f, g, config.params)
        verdicts = audit_all(ledger, config.params, trajectory.T, config.tol_rel, config.c_max)
        verdicts += structural_checks(trajectory.grid, config.params, np.random.default_rng(config.seed),
                                      trials=config.trials)
        write_ledger(os.path.join(self.out, 'ledger.csv'), ledger)
        write_verdicts(os.path.join(self.out, 'verdicts.csv'), verdicts)
        self._registry('add_verdicts', verdicts)

        failed = [v.lemma_id for v in verdicts if not v.passed]
        if failed:
            logger.warning(f"Failed checks: {', '.join(failed)}")
            return EXIT_VERDICT
        logger.info(f"All {sum(v.applicable for v in verdicts)} applicable checks passed")
        return EXIT_OK

    def _problem(self):
        """(problem, f_star or None, nt) from a problem directory or an in-process manufacture."""
        if self.config.data.problem:
            return load_problem(self.config.data.problem)
        manufactured = manufacture(self.config)
        return manufactured.problem, manufactured.f_star, manufactured.nt

    def _gate(self, problem):
        report = check_admissibility(problem)
        write_key_values(os.path.join(self.out, 'admissibility.txt'), report.as_pairs())
        if report.admissible:
            return report, True
        if self.force:
            logger.warning("Problem is not admissible; continuing because of --force")
            return report, True
        print("Inverse problem is not admissible:")
        for key, value in report.as_pairs():
            print(f"  {key} = {value}")
        return report, False

    def run_inverse(self):
        problem, f_star, nt = self._problem()
        _, allowed = self._gate(problem)
        if not allowed:
            return EXIT_CONFIG

        result = solve_inverse(problem, self.config.solver)
        write_iterations(self.out, result.history)
        self._registry('add_iterations', result.history)
        write_field(os.path.join(self.out, 'f_hat.cbff'), result.f_hat)

        final = final_solve(problem, result.f_hat, nt, with_final_rate=False).final
        grad_p = recover_pressure(problem, result.f_hat, nt, final=final)
        write_field(os.path.join(self.out, 'grad_p.cbff'), grad_p)

        summary = [
            ('converged', result.converged),
            ('iterations', result.iterations),
            ('message', result.message),
            ('radius', 'unbounded' if result.radius is None else result.radius),
            ('scaling_triggered', result.scaling_triggered),
            ('self_consistency', norm_l2(final - problem.phi) / max(norm_l2(problem.phi), np.finfo(float).tiny)),
            ('pressure_mismatch', pressure_mismatch(problem, grad_p)),
            ('gradient_fraction', gradient_fraction(result.f_hat)),
        ]
        if f_star is not None:
            scale = norm_l2(f_star)
            error = norm_l2(result.f_hat - f_star)
            summary.append(('f_error', error / scale if scale > 0 else error))
        write_key_values(os.path.join(self.out, 'inverse_summary.txt'), summary)
        return EXIT_OK if result.converged else EXIT_NOT_CONVERGED

    def run_sweep(self):
        problem, _, _ = self._problem()
        _, allowed = self._gate(problem)
        if not allowed:
            return EXIT_CONFIG

        table = run_stability_sweep(problem, self.config.sweep, self.config.solver, threads=self.threads)
        write_stability(self.out, table)
        self._registry('add_stability_rows', table)

        pairs, passed = [], True
        for column in ERROR_COLUMNS:
            bound = check_holder_bound(table, column, table.r)
            pairs += [(f"{column}.constant", bound.constant), (f"{column}.worst_ratio", bound.worst_ratio),
                      (f"{column}.bound_holds", bound.passed)]
            passed = passed and bound.passed
        f_check = check_f_stability_bound(table, problem.params)
        pairs += [('f_stability.max_ratio', f_check.max_ratio), ('f_stability.variation', f_check.variation),
                  ('f_stability.holds', f_check.passed)]
        write_key_values(os.path.join(self.out, 'bounds.txt'), pairs)

        if not all(row.valid for row in table.rows):
            return EXIT_NOT_CONVERGED
        return EXIT_OK if passed and f_check.passed else EXIT_VERDICT

    def run_manufacture(self):
        write_problem(self.out, manufacture(self.config))
        return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog='cbf', description='CBF forward/inverse solver and estimate auditor')
    parser.add_argument('mode', nargs='?', choices=MODES, help='overrides the mode key of the config')
    parser.add_argument('--config', required=True, help='key = value run configuration')
    parser.add_argument('--out', help='output directory (overrides output.dir)')
    parser.add_argument('--force', action='store_true', help='solve inadmissible inverse problems anyway')
    parser.add_argument('--threads', type=int, default=1, help='worker threads for sweep rows')
    parser.add_argument('--seed', type=int, help='random seed (overrides seed)')
    parser.add_argument('--no-registry', action='store_true', help='do not record the run in the database')
    return parser


def open_registry():
    from cbf.database.db_handler import DBHandler

    try:
        return DBHandler()
    except Exception as e:
        logger.error(f"Run registry unavailable: {e}", exc_info=True)
        return None


def main(argv=None):
    """Parse arguments, load the config and run it; returns the exit code."""
    configure_logging()
    args = build_parser().parse_args(argv)
    try:
        config = load_config(args.config, mode=args.mode)
    except ConfigError as e:
        print("Invalid configuration:")
        for error in e.errors:
            print(f"  {error}")
        return EXIT_CONFIG
    config.with_overrides(output_dir=args.out, seed=args.seed)

    db = None if args.no_registry else open_registry()
    try:
        return CbfRunner(config, force=args.force, threads=args.threads, db=db).run()
    finally:
        if db is not None:
            db.close()


if __name__ == '__main__':
    raise SystemExit(main())
