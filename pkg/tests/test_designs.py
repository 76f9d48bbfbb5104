import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import stats

from model.designs import DesignSpec, design_eigenvalues, low_power_sigma, partition_sigma, orthogonality_gap, \
    lm_mean_bound, lm_asymptotic_mean, ar_noncentrality, ncx2_sf, ar_power_oracle, design_report
from model.model_core import ModelParams, NullBlocks
from statistic.statistic_basic import mean_st
from tester.simulation import PowerStudyConfig, power_curve
from tools.utils_linalg import NotPositiveDefiniteError


def test_default_design_inverse_block():
    spec = DesignSpec()
    assert spec.c22 == pytest.approx(1e4 + 1e-6)
    parts = partition_sigma(low_power_sigma(spec))
    assert_allclose(parts.Sup22, 1e6 * np.eye(2), rtol=1e-4)


@pytest.mark.parametrize('k', [2, 3, 4])
def test_partition_matches_inverse(k):
    spec = DesignSpec(k, c11=1.0, c12=2.0)
    Sigma0 = low_power_sigma(spec)
    parts = partition_sigma(Sigma0)
    inv = np.linalg.inv(Sigma0)
    assert_allclose(parts.Sup11, inv[:k, :k], atol=1e-8)
    assert_allclose(parts.Sup21, inv[k:, :k], atol=1e-8)
    assert_allclose(parts.Sup22, inv[k:, k:], atol=1e-8)
    assert_allclose(parts.Sup22, 8.0 * np.eye(k), rtol=1e-8)


def test_eigenvalues():
    spec = DesignSpec(3, c11=1.0, c12=2.0)
    low, high = design_eigenvalues(spec)
    eig = np.linalg.eigvalsh(low_power_sigma(spec))
    assert_allclose(eig[:3], low, rtol=1e-8)
    assert_allclose(eig[3:], high, rtol=1e-8)
    low, high = design_eigenvalues(DesignSpec())
    assert low * high == pytest.approx(1e-6, rel=1e-4)


def test_design_validation():
    with pytest.raises(ValueError):
        DesignSpec(1)
    with pytest.raises(ValueError):
        DesignSpec(2, c12=0.0)
    with pytest.raises(NotPositiveDefiniteError):
        DesignSpec(2, c11=1.0, c12=2.0, c22=1.0)
    with pytest.raises(ValueError):
        DesignSpec(2, mu_direction=[1.0, 0.0, 0.0])
    assert DesignSpec(2, c12=0.0, c22=1.0).c22 == 1.0


def test_orthogonality_and_lm_bound():
    spec = DesignSpec()
    Sigma0 = low_power_sigma(spec)
    assert orthogonality_gap(spec.mu, Sigma0) == 0.0
    bound = lm_mean_bound(spec.mu, Sigma0)
    assert bound == pytest.approx(np.sqrt(50.0) / 100.0, rel=1e-10)
    for delta in [-100.0, -1.0, 0.0, 0.5, 3.0, 1e3]:
        assert abs(lm_asymptotic_mean(delta, spec.mu, Sigma0)) <= bound
    assert lm_asymptotic_mean(1e6, spec.mu, Sigma0) == pytest.approx(bound, rel=1e-3)
    assert lm_asymptotic_mean(0.0, spec.mu, Sigma0) == 0.0


def test_lm_mean_requires_orthogonality():
    Sigma0 = low_power_sigma(DesignSpec())
    with pytest.raises(ValueError):
        lm_asymptotic_mean(1.0, np.array([5.0, 5.0]), Sigma0)


def test_lm_mean_bound_without_cross_term():
    Sigma0 = np.eye(4)
    assert lm_mean_bound(np.array([1.0, 0.0]), Sigma0) == np.inf


@pytest.mark.parametrize('x, df, ncp', [(5.99, 2, 0.0), (5.99, 2, 3.0), (12.0, 4, 10.0), (40.0, 3, 50.0)])
def test_ncx2_sf_matches_scipy(x, df, ncp):
    assert ncx2_sf(x, df, ncp) == pytest.approx(stats.ncx2.sf(x, df, ncp) if ncp > 0 else stats.chi2.sf(x, df),
                                                rel=1e-8, abs=1e-12)


def test_ar_power_oracle():
    spec = DesignSpec()
    Sigma0 = low_power_sigma(spec)
    assert ar_noncentrality(1.0, spec.mu, Sigma0) == pytest.approx(50.0)
    assert ar_power_oracle(0.0, spec.mu, Sigma0) == pytest.approx(0.05, rel=1e-10)
    assert ar_power_oracle(1.0, spec.mu, Sigma0) > 0.999


def test_design_report():
    report = design_report(DesignSpec(), 0.05, [0.0, 2.0])
    assert report['spec']['c12'] == 100.0
    assert report['lm_mean_bound'] == pytest.approx(0.0707106781, rel=1e-8)
    assert report['sigma_sup22_diag'] == pytest.approx([1e6, 1e6], rel=1e-4)
    assert [row['delta'] for row in report['grid']] == [0.0, 2.0]
    assert report['grid'][0]['ar_power'] == pytest.approx(0.05)
    assert report['grid'][1]['lm_mean'] < report['lm_mean_bound']


@pytest.mark.slow
def test_lm_power_collapses_while_ar_power_does_not():
    config = PowerStudyConfig(k=2, delta_grid=[2.0], stats=['ar', 'lm'], reps=200, fast=True, seed=5)
    table = power_curve(config).set_index('stat')
    assert table.loc['ar', 'rate'] > 0.95
    assert table.loc['lm', 'rate'] < 0.15


# E(S)' C K^{-1} E(T) = delta mu' Sigma11^{-1} mu，delta^2 项由正交条件消去
@pytest.mark.parametrize('k', [2, 3])
def test_mean_identity(k):
    spec = DesignSpec(k)
    Sigma0 = low_power_sigma(spec)
    blocks = NullBlocks(Sigma0)
    for delta in [-4.0, -0.5, 0.0, 1.0, 2.0]:
        mean_s, mean_t = mean_st(ModelParams(delta, spec.mu, Sigma0))
        value = mean_s @ blocks.C @ np.linalg.solve(blocks.K, mean_t)
        assert value == pytest.approx(delta * spec.lam / spec.c11, rel=1e-10, abs=1e-8)


@pytest.mark.slow
def test_low_power_ranking_at_delta_one():
    config = PowerStudyConfig(k=2, delta_grid=[1.0], stats=['ar', 'lm', 'qlr', 'clc', 'lr', 'il'], reps=300,
                              mc_reps=1000, seed=23)
    rate = power_curve(config).set_index('stat')['rate']
    assert rate['ar'] >= 0.95
    assert rate['lm'] <= 0.15
    assert rate['qlr'] <= rate['ar'] - 0.2
    assert abs(rate['clc'] - rate['ar']) <= 0.1
    assert rate['lr'] >= rate['lm'] + 0.3
    assert rate['il'] >= rate['lm'] + 0.3
