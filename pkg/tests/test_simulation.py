import json

import numpy as np
import pandas as pd
import pytest
from numpy.testing import assert_allclose

from tester.simulation import PowerStudyConfig, POWER_COLUMNS, SIZE_COLUMNS, FEASIBLE_COLUMNS, DETAIL_COLUMNS, \
    power_curve, size_study, feasible_size_study

RANDOM_SIGMA = {'type': 'random', 'seed': 4, 'lam': 8.0}


def _config(**kwargs):
    options = dict(k=2, sigma=RANDOM_SIGMA, delta_grid=[0.0, 1.5], stats=['ar', 'lm', 'qlr'], reps=12,
                   mc_reps=1000, seed=17)
    options.update(kwargs)
    return PowerStudyConfig(**options)


def test_config_validation():
    with pytest.raises(ValueError):
        _config(delta_grid=[])
    with pytest.raises(ValueError):
        _config(stats=[])
    with pytest.raises(ValueError):
        _config(alpha=1.5)
    with pytest.raises(ValueError):
        _config(reps=0)
    with pytest.raises(ValueError):
        _config(sigma={'type': 'toeplitz'})
    with pytest.raises(ValueError):
        _config(mu=[1.0, 2.0, 3.0])
    with pytest.raises(ValueError):
        _config(k=1, stats=['il'])


def test_config_sigma_sources(tmp_path):
    design = _config(sigma={'type': 'design', 'c12': 2.0})
    assert design.Sigma0[0, 3] == 2.0
    assert_allclose(design.mu, [np.sqrt(50.0), 0.0])
    values = np.eye(4).tolist()
    assert_allclose(_config(sigma={'type': 'matrix', 'values': values}).Sigma0, np.eye(4))
    random = _config()
    assert_allclose(random.Sigma0, _config().Sigma0)
    assert_allclose(random.mu, [2.0, 2.0])
    assert [np.linalg.norm(m) for m in _config(mu_grid=[0.0, 0.5]).mu_grid] == pytest.approx([0.0, np.sqrt(2.0)])


def test_config_from_json(tmp_path):
    path = tmp_path / 'study.json'
    path.write_text(json.dumps({'k': 2, 'sigma': RANDOM_SIGMA, 'delta_grid': [1.0], 'stats': ['AR'],
                                'reps': 3}), encoding='utf-8')
    config = PowerStudyConfig.from_json(str(path))
    assert config.stats == ['ar']
    assert config.delta_grid == [1.0]


def test_power_curve_table():
    table = power_curve(_config())
    assert list(table.columns) == POWER_COLUMNS
    assert len(table) == 6
    assert set(table['stat']) == {'ar', 'lm', 'qlr'}
    assert (table['reps'] == 12).all()
    expected_se = np.sqrt(table['rate'] * (1.0 - table['rate']) / 12)
    assert_allclose(table['se'], expected_se)


def test_power_curve_is_deterministic_across_workers():
    one = power_curve(_config(workers=1))
    many = power_curve(_config(workers=4))
    pd.testing.assert_frame_equal(one, many)


def test_power_curve_details():
    table, details = power_curve(_config(), keep_details=True)
    assert list(details.columns) == DETAIL_COLUMNS
    assert len(details) == 3 * 2 * 12
    rates = details.groupby(['stat', 'cell'])['reject'].mean()
    assert rates[('qlr', 1)] == pytest.approx(table.set_index(['stat', 'delta']).loc[('qlr', 1.5), 'rate'])


def test_all_statistics_see_the_same_draw():
    _, details = power_curve(_config(stats=['ar', 'lm']), keep_details=True)
    ar = details[details['stat'] == 'ar'].reset_index(drop=True)
    lm = details[details['stat'] == 'lm'].reset_index(drop=True)
    assert (lm['value'] <= ar['value'] + 1e-9).all()


def test_size_study_table():
    table = size_study(_config(mu_grid=[0.0, 1.0]))
    assert list(table.columns) == SIZE_COLUMNS
    assert table['mu_norm'].tolist()[:2] == pytest.approx([0.0, np.sqrt(8.0)])


@pytest.mark.slow
def test_fast_ar_size():
    table = size_study(_config(stats=['ar'], reps=400, fast=True, mu_grid=[1.0]))
    assert 0.01 <= table.loc[0, 'rate'] <= 0.10


def test_feasible_size_study():
    config = _config(stats=['ar', 'lm'], reps=10, fast=True, dgp='iid', n_grid=[100, 200])
    table = feasible_size_study(config)
    assert list(table.columns) == FEASIBLE_COLUMNS
    assert table['n'].tolist() == [100, 200, 100, 200]
    assert (table['sigma_error'] < 1.0).all()
    again = feasible_size_study(config)
    pd.testing.assert_frame_equal(table, again)


def test_feasible_study_needs_dgp():
    with pytest.raises(ValueError):
        feasible_size_study(_config(n_grid=[100]))
    with pytest.raises(ValueError):
        feasible_size_study(_config(dgp='iid'))


# ================================
# 慢速水平检查：原假设下拒绝率在 0.05 附近，mu = 0 为完全不识别
# ================================

SIZE_STATS = ['ar', 'lm', 'qlr', 'lr', 'il']


def _assert_size(table, tol=0.015):
    for _, row in table.iterrows():
        assert abs(row['rate'] - 0.05) <= tol, f"{row['stat']} size {row['rate']:.4f}"


@pytest.mark.slow
@pytest.mark.parametrize('k', [2, 4])
@pytest.mark.parametrize('sigma_seed', [1, 2, 3])
def test_size_random_sigma(k, sigma_seed):
    config = PowerStudyConfig(k=k, sigma={'type': 'random', 'seed': sigma_seed, 'lam': 8.0}, mu_grid=[1.0],
                              stats=SIZE_STATS, reps=2000, mc_reps=1000, seed=31 + sigma_seed)
    _assert_size(size_study(config))


@pytest.mark.slow
@pytest.mark.parametrize('k', [2, 4])
def test_size_low_power_design(k):
    config = PowerStudyConfig(k=k, sigma={'type': 'design'}, mu_grid=[0.0, 1.0], stats=SIZE_STATS,
                              reps=2000, mc_reps=1000, seed=41)
    table = size_study(config)
    assert sorted(set(table['mu_norm'])) == pytest.approx([0.0, np.sqrt(50.0)])
    _assert_size(table)


@pytest.mark.slow
def test_feasible_size_iid():
    config = PowerStudyConfig(k=2, stats=['ar', 'lm', 'qlr'], reps=2000, mc_reps=1000, fast=True, seed=43,
                              dgp='iid', n_grid=[2000])
    _assert_size(feasible_size_study(config), tol=0.02)


@pytest.mark.slow
def test_feasible_sigma_error_shrinks_with_n():
    config = PowerStudyConfig(k=2, stats=['ar'], reps=50, fast=True, seed=47, dgp='iid',
                              n_grid=[500, 2000, 10000])
    error = feasible_size_study(config).set_index('n')['sigma_error']
    assert error[500] > error[2000] > error[10000]
