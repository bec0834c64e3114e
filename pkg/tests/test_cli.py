"""
Tests for the command line interface and the INI run config
"""
import numpy as np
import pytest

from config import RunConfig
from db import RunLog, get_session, load
from errors import ConfigError
from main import EXIT_FAILURE, EXIT_OK, EXIT_USAGE, main


def _gen(path, *extra):
    return main(['gen', '--n', '64', '--dim', '4', '--components', '3', '--seed', '2', '-o', str(path), *extra])


@pytest.fixture
def data_file(tmp_path):
    path = tmp_path / "data.nnse"
    assert _gen(path) == EXIT_OK
    return path


def _read_csv(path):
    lines = path.read_text(encoding="utf-8").splitlines()
    return lines[0].split(","), [line.split(",") for line in lines[1:]]


class TestGen:

    def test_prints_shape_and_checksum(self, tmp_path, capsys):
        assert _gen(tmp_path / "a.nnse") == EXIT_OK
        out = capsys.readouterr().out.splitlines()
        assert out[0] == "N=64"
        assert out[1] == "d=4"
        assert out[2].startswith("checksum=")
        assert len(out[2]) == len("checksum=") + 64

    def test_same_seed_same_checksum(self, tmp_path, capsys):
        _gen(tmp_path / "a.nnse")
        first = capsys.readouterr().out
        _gen(tmp_path / "b.nnse")
        second = capsys.readouterr().out
        assert first == second
        assert (tmp_path / "a.nnse").read_bytes() == (tmp_path / "b.nnse").read_bytes()

    def test_csv_output(self, tmp_path):
        assert _gen(tmp_path / "a.csv") == EXIT_OK
        assert _gen(tmp_path / "a.nnse") == EXIT_OK
        np.testing.assert_array_equal(load(tmp_path / "a.csv").points, load(tmp_path / "a.nnse").points)

    def test_missing_out(self):
        with pytest.raises(SystemExit) as err:
            main(['gen', '--n', '10'])
        assert err.value.code == EXIT_USAGE

    def test_invalid_spec(self, tmp_path, capsys):
        assert main(['gen', '--kind', 'moons', '--dim', '3', '-o', str(tmp_path / "m.nnse")]) == EXIT_USAGE
        assert "two moons" in capsys.readouterr().err


class TestIndex:

    def test_validates(self, data_file, tmp_path, capsys):
        out = tmp_path / "nn.csv"
        assert main(['index', '--data', str(data_file), '--k', '5', '--queries', '7', '-o', str(out)]) == EXIT_OK
        assert "Mismatches:      0" in capsys.readouterr().out
        header, rows = _read_csv(out)
        assert header == ['query', 'rank', 'index', 'dist']
        assert len(rows) == 7 * 5


class TestEstimate:

    def test_writes_rows(self, data_file, tmp_path):
        queries = tmp_path / "z.csv"
        queries.write_text("0,0,0,0\n0.5,-0.5,0.1,0.2\n", encoding="utf-8")
        out = tmp_path / "est.csv"
        code = main([
            'estimate', '--data', str(data_file), '--queries', str(queries), '--t', '0.5',
            '--estimators', 'knn,uniform,exact', '--n', '32', '--k', '8', '-o', str(out),
        ])
        assert code == EXIT_OK
        header, rows = _read_csv(out)
        assert header[:4] == ['point', 't', 'estimator', 'ess']
        assert len(header) == 4 + 2 * 4
        assert len(rows) == 2 * 3
        assert [row[2] for row in rows[:3]] == ['knn', 'uniform', 'exact']

    def test_rejects_stf(self, data_file, tmp_path):
        queries = tmp_path / "z.csv"
        queries.write_text("0,0,0,0\n", encoding="utf-8")
        code = main([
            'estimate', '--data', str(data_file), '--queries', str(queries), '--t', '0.5',
            '--estimators', 'stf', '-o', str(tmp_path / "est.csv"),
        ])
        assert code == EXIT_USAGE

    def test_query_dimension_mismatch(self, data_file, tmp_path, capsys):
        queries = tmp_path / "z.csv"
        queries.write_text("0,0,0\n", encoding="utf-8")
        code = main([
            'estimate', '--data', str(data_file), '--queries', str(queries), '--t', '0.5',
            '--estimators', 'knn', '-o', str(tmp_path / "est.csv"),
        ])
        assert code == EXIT_FAILURE
        assert "dimension 3" in capsys.readouterr().err

    def test_pinned_token(self, data_file, tmp_path):
        queries = tmp_path / "z.csv"
        queries.write_text("0,0,0,0\n", encoding="utf-8")
        out = tmp_path / "est.csv"
        code = main([
            'estimate', '--data', str(data_file), '--queries', str(queries), '--t', '0.5',
            '--estimators', 'knn:n=8:k=4', '-o', str(out),
        ])
        assert code == EXIT_OK
        _, rows = _read_csv(out)
        assert rows[0][2] == 'knn'


class TestBench:

    def _bench(self, data_file, out, *extra):
        return main([
            'bench', '--data', str(data_file), '--t-grid', '0.1,1.0', '--points', '4', '--reps', '3',
            '--n', '16', '--k', '8', '-o', str(out), *extra,
        ])

    def test_exact_estimator_has_no_error(self, data_file, tmp_path):
        out = tmp_path / "report.csv"
        assert self._bench(data_file, out, '--estimators', 'exact') == EXIT_OK
        header, rows = _read_csv(out)
        assert header == ['t', 'estimator', 'target', 'n', 'k', 'bias_sq', 'variance', 'mse', 'ess_mean']
        assert len(rows) == 4
        for row in rows:
            assert abs(float(row[5])) < 1e-20
            assert abs(float(row[6])) < 1e-20

    def test_thread_count_irrelevant(self, data_file, tmp_path):
        outputs = []
        for threads in ('1', '4', '8'):
            out = tmp_path / f"r{threads}.csv"
            assert self._bench(data_file, out, '--estimators', 'knn,uniform,stf', '--threads', threads) == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_unknown_estimator(self, data_file, tmp_path):
        assert self._bench(data_file, tmp_path / "r.csv", '--estimators', 'langevin') == EXIT_USAGE

    def test_setting_grid(self, data_file, tmp_path):
        out = tmp_path / "grid.csv"
        code = main([
            'bench', '--data', str(data_file), '--t-grid', '0.5', '--points', '3', '--reps', '2',
            '--estimators', 'mc_posterior,knn:k=4,knn:k=16', '--n', '4,8', '-o', str(out),
        ])
        assert code == EXIT_OK
        _, rows = _read_csv(out)
        settings = [(row[1], row[3], row[4]) for row in rows if row[2] == 'mean']
        assert settings == [
            ('mc_posterior', '4', '0'), ('mc_posterior', '8', '0'),
            ('knn', '4', '4'), ('knn', '8', '4'),
            ('knn', '4', '16'), ('knn', '8', '16'),
        ]

    def test_grid_from_config(self, data_file, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[estimators]\nnames = stf, knn:n=8\nn_grid = 4, 6\nk_grid = 2, 3\n", encoding="utf-8")
        out = tmp_path / "grid.csv"
        code = main([
            'bench', '--data', str(data_file), '--config', str(cfg), '--t-grid', '0.5', '--points', '2',
            '--reps', '2', '-o', str(out),
        ])
        assert code == EXIT_OK
        _, rows = _read_csv(out)
        settings = [(row[1], row[3], row[4]) for row in rows if row[2] == 'mean']
        assert settings == [('stf', '4', '0'), ('stf', '6', '0'), ('knn', '8', '2'), ('knn', '8', '3')]

    @pytest.mark.parametrize("value", ["four", ""])
    def test_bad_grid(self, data_file, tmp_path, value):
        assert self._bench(data_file, tmp_path / "r.csv", '--estimators', 'knn', '--k', value) == EXIT_USAGE


class TestBounds:

    def test_no_violations(self, data_file, tmp_path, capsys):
        out = tmp_path / "bounds.csv"
        code = main([
            'bounds', '--data', str(data_file), '--trials', '20', '--k', '8', '--n', '4', '-o', str(out),
        ])
        assert code == EXIT_OK
        assert "0 violations / 20 trials" in capsys.readouterr().out
        header, rows = _read_csv(out)
        assert header == ['trial', 't', 'k', 'lhs', 'rhs', 'rho', 'satisfied', 'margin']
        assert all(row[6] == 'true' for row in rows)

    def test_full_neighbour_set(self, data_file, tmp_path):
        out = tmp_path / "bounds.csv"
        code = main([
            'bounds', '--data', str(data_file), '--theorem', '2', '--trials', '10', '--k', '64',
            '--n', '4', '-o', str(out),
        ])
        assert code == EXIT_OK
        _, rows = _read_csv(out)
        for row in rows:
            assert float(row[5]) == pytest.approx(1.0, abs=1e-9)

    def test_k_above_dataset_size(self, data_file):
        assert main(['bounds', '--data', str(data_file), '--trials', '2', '--k', '65']) == EXIT_USAGE


class TestSample:

    def test_single_atom(self, tmp_path):
        data = tmp_path / "atom.csv"
        data.write_text("0.5,-0.5\n", encoding="utf-8")
        out = tmp_path / "s.csv"
        code = main([
            'sample', '--data', str(data), '--score', 'exact', '--steps', '10', '--samples', '5',
            '-o', str(out),
        ])
        assert code == EXIT_OK
        header, rows = _read_csv(out)
        assert header == ['sample_id', 't', 'x0', 'x1']
        assert len(rows) == 5
        for row in rows:
            assert float(row[1]) == 0.002
            np.testing.assert_allclose([float(row[2]), float(row[3])], [0.5, -0.5], atol=1e-3 * 80.0)

    def test_stop_at_switch(self, data_file, tmp_path):
        out = tmp_path / "s.csv"
        code = main([
            'sample', '--data', str(data_file), '--score', 'knn', '--n', '16', '--k', '8', '--steps', '6',
            '--samples', '3', '--t-switch', '2.0', '-o', str(out),
        ])
        assert code == EXIT_OK
        _, rows = _read_csv(out)
        assert [row[1] for row in rows] == ['2.0'] * 3

    def test_thread_count_irrelevant(self, data_file, tmp_path):
        outputs = []
        for threads in ('1', '4', '8'):
            out = tmp_path / f"s{threads}.csv"
            code = main([
                'sample', '--data', str(data_file), '--score', 'knn', '--n', '16', '--k', '8',
                '--steps', '5', '--samples', '9', '--seed', '3', '--threads', threads, '-o', str(out),
            ])
            assert code == EXIT_OK
            outputs.append(out.read_bytes())
        assert outputs[0] == outputs[1] == outputs[2]

    def test_trace(self, data_file, tmp_path):
        out = tmp_path / "s.csv"
        code = main([
            'sample', '--data', str(data_file), '--score', 'exact', '--steps', '4', '--samples', '2',
            '--trace', '-o', str(out),
        ])
        assert code == EXIT_OK
        _, rows = _read_csv(out)
        assert len(rows) == 5 * 2

    def test_invalid_solver(self, data_file, tmp_path):
        with pytest.raises(SystemExit) as err:
            main(['sample', '--data', str(data_file), '--solver', 'rk4', '-o', str(tmp_path / "s.csv")])
        assert err.value.code == EXIT_USAGE

    def test_invalid_switch(self, data_file, tmp_path):
        code = main([
            'sample', '--data', str(data_file), '--t-switch', '100', '-o', str(tmp_path / "s.csv"),
        ])
        assert code == EXIT_USAGE


class TestFailures:

    def test_corrupted_dataset(self, data_file, tmp_path, capsys):
        raw = bytearray(data_file.read_bytes())
        raw[:4] = b"XXXX"
        bad = tmp_path / "bad.nnse"
        bad.write_bytes(bytes(raw))
        assert main(['index', '--data', str(bad)]) == EXIT_FAILURE
        assert "byte offset 0" in capsys.readouterr().err

    def test_missing_dataset(self, tmp_path):
        assert main(['index', '--data', str(tmp_path / "nope.nnse")]) == EXIT_FAILURE

    def test_unknown_config_key(self, data_file, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[sampler]\norder = 2\n", encoding="utf-8")
        assert main(['index', '--data', str(data_file), '--config', str(cfg)]) == EXIT_USAGE

    def test_bad_config_value(self, data_file, tmp_path):
        cfg = tmp_path / "run.ini"
        cfg.write_text("[sampler]\nsolver = rk4\n", encoding="utf-8")
        code = main(['sample', '--data', str(data_file), '--config', str(cfg), '-o', str(tmp_path / "s.csv")])
        assert code == EXIT_USAGE


class TestRunLedger:

    def test_records_runs(self, data_file, tmp_path):
        db_path = tmp_path / "runs.sqlite"
        out = tmp_path / "bounds.csv"
        code = main([
            'bounds', '--data', str(data_file), '--trials', '5', '--k', '8', '--n', '4', '--seed', '7',
            '--runs-db', str(db_path), '-o', str(out),
        ])
        assert code == EXIT_OK
        session = get_session(db_path)
        try:
            rows = session.query(RunLog).all()
            assert len(rows) == 1
            entry = rows[0].to_dict()
        finally:
            session.close()
        assert entry['command'] == 'bounds'
        assert entry['status'] == 'ok'
        assert entry['seed'] == '7'
        assert entry['summary']['violations'] == 0
        assert entry['output_sha256'] is not None

    def test_records_errors(self, tmp_path):
        db_path = tmp_path / "runs.sqlite"
        assert main(['index', '--data', str(tmp_path / "nope.nnse"), '--runs-db', str(db_path)]) == EXIT_FAILURE
        session = get_session(db_path)
        try:
            entry = session.query(RunLog).one()
            assert entry.status == 'error'
            assert entry.error
        finally:
            session.close()


class TestRunConfig:

    def test_typed_values(self):
        cfg = RunConfig.from_text(
            "[estimators]\nnames = knn, uniform\nn = 128\n"
            "[sampler]\nshared_stage_batch = yes\nrho = 5\n"
        )
        assert cfg.get('estimators', 'names') == ['knn', 'uniform']
        assert cfg.get('estimators', 'n') == 128
        assert cfg.get('sampler', 'shared_stage_batch') is True
        assert cfg.get('sampler', 'rho') == 5.0
        assert cfg.get('run', 'seed', 3) == 3

    def test_unknown_section(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("[network]\nport = 1\n")

    def test_bad_value(self):
        with pytest.raises(ConfigError):
            RunConfig.from_text("[bounds]\ntrials = many\n")

    def test_missing_file(self, tmp_path):
        with pytest.raises(ConfigError):
            RunConfig.load(tmp_path / "absent.ini")

    def test_section_is_a_copy(self):
        cfg = RunConfig.from_text("[dataset]\nn = 10\n")
        cfg.section('dataset')['n'] = 99
        assert cfg.get('dataset', 'n') == 10
