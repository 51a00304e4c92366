"""Manufactured problems and the command-line runner end to end."""
import os

import numpy as np
import pytest
from dotenv import dotenv_values

from cbf.config import load_config
from cbf.forward import SamplingPolicy, solve_forward
from cbf.main import (
    EXIT_BLOW_UP, EXIT_CONFIG, EXIT_OK, CbfRunner, build_parser, main,
)
from cbf.inverse import pressure_mismatch, recover_pressure
from cbf.manufacture import FIELD_FILES, PROBLEM_FILE, load_problem, manufacture, write_problem
from cbf.snapshots import read_field
from cbf.spectral import norm_l2

SMALL_PROBLEM = dict(
    params__mu=1, params__alpha=4, params__beta=1, params__r=3, grid__n=16, time__T=1, time__nt=100,
    data__u0='tg1', data__u0_amplitude=0.1, data__f='tg1', data__f_amplitude=0.5, data__g='one',
)


def run_cli(*args):
    return main(list(args) + ['--no-registry'])


@pytest.fixture
def problem_dir(tmp_path, write_config):
    directory = str(tmp_path / 'problem')
    path = write_config('manufacture.cfg', mode='manufacture', **SMALL_PROBLEM)
    assert run_cli('--config', path, '--out', directory) == EXIT_OK
    return directory


class TestManufacture:
    def test_written_problem_reproduces_its_final_state(self, tmp_path, write_config):
        config = load_config(write_config(mode='manufacture', **SMALL_PROBLEM))
        directory = str(tmp_path / 'problem')

        write_problem(directory, manufacture(config))
        problem, f_star, nt = load_problem(directory)
        final = solve_forward(problem.u0, f_star, problem.g, problem.params, problem.T, nt,
                              record=SamplingPolicy(final_only=True)).final

        assert nt == 100
        assert not problem.violations()
        assert problem.phi.divergence_max() <= 1e-9
        assert np.max(np.abs(final.values - problem.phi.values)) <= 1e-12

    def test_zero_data_gives_trivial_problem(self, write_config):
        config = load_config(write_config(mode='manufacture', grid__n=16, time__nt=16, data__u0='zero',
                                          data__f='zero'))

        manufactured = manufacture(config)

        assert norm_l2(manufactured.problem.phi) == 0.0
        assert norm_l2(manufactured.problem.grad_psi) == 0.0

    def test_directory_layout(self, problem_dir):
        for name in FIELD_FILES + (PROBLEM_FILE, 'manifest.txt', 'trajectory/manifest.txt'):
            assert os.path.exists(os.path.join(problem_dir, name)), name

        description = dotenv_values(os.path.join(problem_dir, PROBLEM_FILE))
        assert description['g'] == 'one'
        assert float(description['mu']) == 1.0
        assert int(description['n']) == 16

    def test_incomplete_description(self, problem_dir):
        with open(os.path.join(problem_dir, PROBLEM_FILE), 'w', encoding='utf-8') as handle:
            handle.write("d=2\n")

        with pytest.raises(ValueError, match="lacks keys"):
            load_problem(problem_dir)


class TestCli:
    def test_parser(self):
        args = build_parser().parse_args(['sweep', '--config', 'run.cfg', '--threads', '4', '--seed', '3'])

        assert args.mode == 'sweep'
        assert args.threads == 4
        assert args.seed == 3
        assert not args.force

    def test_invalid_config(self, write_config, capsys):
        path = write_config(mode='forward', grid__n=7)

        assert run_cli('--config', path) == EXIT_CONFIG
        assert "grid.n must be even" in capsys.readouterr().out

    def test_verify_taylor_green(self, tmp_path, write_config):
        out = str(tmp_path / 'verify')
        path = write_config(mode='verify', params__alpha=2, grid__n=16, time__nt=400,
                            data__u0='tg1', data__f='zero')

        assert run_cli('--config', path, '--out', out) == EXIT_OK

        with open(os.path.join(out, 'verdicts.csv'), encoding='utf-8') as handle:
            header, *rows = handle.read().splitlines()
        assert header.startswith('lemma_id,equation,regime')
        assert not any(',FAIL,' in row for row in rows)
        assert os.path.exists(os.path.join(out, 'ledger.csv'))
        assert os.path.exists(os.path.join(out, 'provenance.txt'))

    def test_verify_stored_trajectory(self, tmp_path, write_config):
        forward_out = str(tmp_path / 'forward')
        forward = write_config('forward.cfg', mode='forward', grid__n=16, time__nt=400, data__u0='tg1',
                               data__f='tg2', data__f_amplitude=0.5)
        assert run_cli('--config', forward, '--out', forward_out) == EXIT_OK

        verify = write_config('verify.cfg', mode='verify', grid__n=16, data__f='tg2', data__f_amplitude=0.5,
                              data__trajectory='forward/trajectory')

        assert run_cli('--config', verify, '--out', str(tmp_path / 'verify')) == EXIT_OK

    def test_inadmissible_inverse_is_refused(self, tmp_path, write_config, capsys):
        out = str(tmp_path / 'inverse')
        path = write_config(mode='inverse', **dict(SMALL_PROBLEM, params__mu=1e-3))

        assert run_cli('--config', path, '--out', out) == EXIT_CONFIG

        report = dotenv_values(os.path.join(out, 'admissibility.txt'))
        assert report['admissible'] == 'false'
        assert "not admissible" in capsys.readouterr().out
        assert not os.path.exists(os.path.join(out, 'f_hat.cbff'))

    def test_blow_up(self, tmp_path, write_config):
        path = write_config(mode='forward', params__r=5, grid__n=16, time__nt=2,
                            data__u0='tg1', data__u0_amplitude=100)

        assert run_cli('--config', path, '--out', str(tmp_path / 'forward')) == EXIT_BLOW_UP

    def test_inverse_on_problem_directory(self, tmp_path, write_config, problem_dir):
        out = str(tmp_path / 'inverse')
        path = write_config('inverse.cfg', mode='inverse', time__nt=100, data__problem='problem',
                            solver__ball_radius='unbounded', solver__rel_tol=1e-10)

        assert run_cli('--config', path, '--out', out) == EXIT_OK

        summary = dotenv_values(os.path.join(out, 'inverse_summary.txt'))
        assert summary['converged'] == 'true'
        assert float(summary['f_error']) <= 1e-6
        assert float(summary['self_consistency']) <= 1e-6
        for name in ('f_hat.cbff', 'grad_p.cbff', 'iterations.csv', 'timings.dat', 'admissibility.txt'):
            assert os.path.exists(os.path.join(out, name)), name

    def test_inverse_pressure_matches_recovery(self, tmp_path, write_config, problem_dir):
        out = str(tmp_path / 'inverse')
        path = write_config('inverse.cfg', mode='inverse', time__nt=100, data__problem='problem',
                            solver__ball_radius='unbounded', solver__rel_tol=1e-10)
        assert run_cli('--config', path, '--out', out) == EXIT_OK
        problem, _, nt = load_problem(problem_dir)

        recovered = recover_pressure(problem, read_field(os.path.join(out, 'f_hat.cbff')), nt)

        written = read_field(os.path.join(out, 'grad_p.cbff'))
        np.testing.assert_allclose(written.values, recovered.values, atol=1e-12)
        summary = dotenv_values(os.path.join(out, 'inverse_summary.txt'))
        assert float(summary['pressure_mismatch']) == pytest.approx(pressure_mismatch(problem, recovered),
                                                                   rel=1e-5, abs=1e-12)

    def test_mode_from_command_line(self, tmp_path, write_config):
        path = write_config(mode='verify', grid__n=16, time__nt=64, data__u0='tg1')
        out = str(tmp_path / 'forward')

        assert run_cli('forward', '--config', path, '--out', out) == EXIT_OK
        assert os.path.exists(os.path.join(out, 'trajectory', 'manifest.txt'))
        assert not os.path.exists(os.path.join(out, 'verdicts.csv'))

    def test_forward_outputs_are_reproducible(self, tmp_path, write_config):
        path = write_config(mode='forward', grid__n=16, time__nt=64, data__u0='random', data__f='random')
        outputs = [str(tmp_path / name) for name in ('first', 'second')]

        for out in outputs:
            assert run_cli('--config', path, '--out', out, '--seed', '5') == EXIT_OK

        for name in ('ledger.csv', os.path.join('trajectory', 'diagnostics.csv')):
            contents = [open(os.path.join(out, name), 'rb').read() for out in outputs]
            assert contents[0] == contents[1]


class TestRunner:
    def test_force_runs_inadmissible_problem(self, tmp_path, write_config):
        config = load_config(write_config(mode='inverse', **dict(SMALL_PROBLEM, params__mu=1e-3,
                                                                  solver__ball_radius='unbounded',
                                                                  solver__max_iters=3)))
        config.with_overrides(output_dir=str(tmp_path / 'forced'))

        code = CbfRunner(config, force=True).run()

        assert code != EXIT_CONFIG
        assert os.path.exists(os.path.join(config.output_dir, 'iterations.csv'))

    def test_registry_records_the_run(self, tmp_path, write_config):
        from cbf.database.db_handler import DBHandler

        db = DBHandler(f"sqlite:///{tmp_path / 'runs.db'}")
        config = load_config(write_config(mode='verify', grid__n=16, time__nt=200, data__u0='tg1',
                                          data__f='zero'))
        config.with_overrides(output_dir=str(tmp_path / 'verify'))

        code = CbfRunner(config, db=db).run()

        runs = db.get_runs('verify')
        assert len(runs) == 1
        assert runs[0].exit_code == code
        assert runs[0].status == ('ok' if code == EXIT_OK else 'failed')
        assert len(db.get_verdicts(runs[0].id)) > 0
        db.close()


@pytest.mark.slow
def test_phi_sweep_through_the_cli(tmp_path, write_config, problem_dir):
    out = str(tmp_path / 'sweep')
    path = write_config('sweep.cfg', mode='sweep', time__nt=100, data__problem='problem',
                        solver__ball_radius='unbounded', solver__rel_tol=1e-10,
                        sweep__target='phi', sweep__delta0=1e-2)

    code = run_cli('--config', path, '--out', out, '--threads', '2')

    assert code == EXIT_OK
    fits = dotenv_values(os.path.join(out, 'fit_summary.txt'))
    assert float(fits['f_error.exponent']) >= 0.45
    bounds = dotenv_values(os.path.join(out, 'bounds.txt'))
    assert bounds['f_error.bound_holds'] == 'true'
