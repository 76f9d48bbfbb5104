import io
import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

import run_ivtest
from model.designs import partition_sigma
from reader.reader_sample import HomoskedasticDGP, save_sample_csv
from tools.utils_cache import save_matrix, save_json


@pytest.fixture
def data_path(tmp_path):
    raw = HomoskedasticDGP(2, beta=0.3, pi=[3.0, 1.0]).draw(200, np.random.default_rng(8))
    path = str(tmp_path / 'toy.csv')
    save_sample_csv(path, raw)
    return path


def _run(capsys, argv):
    code = run_ivtest.main(argv)
    return code, capsys.readouterr().out


def test_design_lowpower_prints_sigma(capsys):
    code, out = _run(capsys, ['design', 'lowpower'])
    assert code == run_ivtest.EXIT_OK
    sigma = np.loadtxt(io.StringIO(out), delimiter=',')
    assert sigma.shape == (4, 4)
    assert_allclose(partition_sigma(sigma).Sup22, 1e6 * np.eye(2), rtol=1e-4)


def test_design_lowpower_with_outputs(capsys, tmp_path):
    sigma_path = str(tmp_path / 'sigma.csv')
    report_path = str(tmp_path / 'report.json')
    code, out = _run(capsys, ['design', 'lowpower', '--k', '3', '--sigma-out', sigma_path, '--report', report_path])
    assert code == 0
    report = json.loads(out)
    assert report['lm_mean_bound'] == pytest.approx(np.sqrt(50.0) / 100.0)
    assert report['spec']['k'] == 3
    assert np.loadtxt(sigma_path, delimiter=',').shape == (6, 6)
    with open(report_path, encoding='utf-8') as f:
        assert json.load(f)['alpha'] == 0.05


def test_test_command_json(capsys, data_path):
    argv = ['test', '--data', data_path, '--beta0', '0.3', '--stat', 'ar', 'qlr', '--mc-reps', '1000']
    code, out = _run(capsys, argv)
    assert code == 0
    payload = json.loads(out)
    assert [p['statistic'] for p in payload] == ['ar', 'qlr']
    assert payload[0]['beta0'] == 0.3
    assert payload[0]['hac']['kernel'] == 'bartlett'
    assert payload[0]['seed'] == run_ivtest.DEFAULT_SEED
    _, again = _run(capsys, argv)
    assert again == out


def test_test_command_csv(capsys, data_path):
    code, out = _run(capsys, ['test', '--data', data_path, '--beta0', '0', '--stat', 'ar', 'lm', '--fast',
                              '--csv'])
    assert code == 0
    table = pd.read_csv(io.StringIO(out))
    assert list(table.columns) == ['stat', 'value', 'critical', 'p', 'reject']
    assert table['critical'].tolist() == pytest.approx([5.991464547, 3.841458821])


def test_test_command_known_sigma(capsys, data_path, tmp_path):
    sigma_path = str(tmp_path / 'sigma.csv')
    save_matrix(sigma_path, np.kron(np.array([[1.0, 0.5], [0.5, 1.0]]), np.eye(2)))
    code, out = _run(capsys, ['test', '--data', data_path, '--beta0', '0.3', '--sigma', sigma_path, '--fast'])
    assert code == 0
    payload = json.loads(out)
    assert payload['statistic'] == 'ar'
    assert 'hac' not in payload


def test_usage_errors(capsys, tmp_path):
    assert run_ivtest.main(['frobnicate']) == run_ivtest.EXIT_USAGE
    assert run_ivtest.main(['test', '--beta0', '0']) == run_ivtest.EXIT_USAGE
    assert run_ivtest.main(['test', '--data', str(tmp_path / 'missing.csv'), '--beta0', '0']) == 1
    assert run_ivtest.main(['design', 'lowpower', '--c12', '0']) == 1


def test_numeric_failure_exit_code(capsys, data_path, tmp_path):
    sigma_path = str(tmp_path / 'bad.csv')
    save_matrix(sigma_path, -np.eye(4))
    code = run_ivtest.main(['test', '--data', data_path, '--beta0', '0', '--sigma', sigma_path])
    assert code == run_ivtest.EXIT_NUMERIC
    assert capsys.readouterr().out == ''


def test_kron_approx(capsys, tmp_path):
    Phi = np.array([[2.0, 0.5], [0.5, 0.625]])
    sigma = np.kron(np.array([[1.0, 0.3], [0.3, 2.0]]), Phi)
    sigma_path = str(tmp_path / 'sigma.csv')
    r0_path = str(tmp_path / 'r0.csv')
    save_matrix(sigma_path, sigma)
    save_matrix(r0_path, np.array([[1.0, 0.5], [-0.2, 0.3]]))
    code, out = _run(capsys, ['kron', 'approx', '--sigma', sigma_path, '--r0', r0_path])
    assert code == 0
    payload = json.loads(out)
    assert payload['relative_residual'] < 1e-10
    assert payload['degenerate']
    assert_allclose(payload['Phi'], Phi, atol=1e-10)


def test_power_command(capsys, tmp_path):
    config = str(tmp_path / 'power.json')
    save_json(config, {'k': 2, 'sigma': {'type': 'random', 'seed': 1}, 'delta_grid': [0.0, 2.0],
                       'stats': ['ar', 'lm'], 'reps': 5})
    out_path = str(tmp_path / 'power.csv')
    long_path = str(tmp_path / 'long.csv')
    code, out = _run(capsys, ['power', '--config', config, '--fast', '--seed', '3', '--out', out_path,
                              '--long', long_path])
    assert code == 0
    assert out == ''
    table = pd.read_csv(out_path)
    assert list(table.columns) == ['stat', 'delta', 'rate', 'se', 'reps']
    assert len(pd.read_csv(long_path)) == 2 * 2 * 5


def test_size_command_feasible(capsys, tmp_path):
    config = str(tmp_path / 'size.json')
    save_json(config, {'k': 2, 'sigma': {'type': 'random'}, 'stats': ['ar'], 'reps': 4, 'fast': True,
                       'dgp': 'hac', 'n_grid': [120]})
    code, out = _run(capsys, ['size', '--config', config])
    assert code == 0
    table = pd.read_csv(io.StringIO(out))
    assert list(table.columns) == ['stat', 'n', 'rate', 'se', 'reps', 'sigma_error']


def test_check_invariance_command(capsys):
    code, out = _run(capsys, ['check', 'invariance', '--k', '2', '--pairs', '4', '--decision-pairs', '1',
                              '--no-weight', '--no-il', '--seed', '2'])
    assert code == 0
    report = json.loads(out)
    assert report['passed']
    assert report['ks'] == [2]
