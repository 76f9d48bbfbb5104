# ================================
# 蒙特卡洛水平与功效研究
# 数据抽样按 (seed, cell, rep) 取子流，临界值种子由同一三元组派生，所有统计量共用同一次抽样
# ================================
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Callable, List, Optional, Tuple

import numpy as np
import pandas as pd

from settings import ConditionalParameters, DesignParameters, DEFAULT_SEED
from model.model_core import ModelParams, NullBlocks, STPair, draw_r0
from model.designs import DesignSpec, low_power_sigma
from reader.reader_sample import make_dgp
from estimator.hac_estimation import feasible_problem
from statistic.statistic_components import get_statistic
from tester.conditional import run_test_st, TestResult
from tools.utils_cache import load_json, load_matrix
from tools.utils_linalg import random_spd
from tools.utils_random import substream, derive_seed, TAG_DATA, TAG_CRITICAL

POWER_COLUMNS = ['stat', 'delta', 'rate', 'se', 'reps']
SIZE_COLUMNS = ['stat', 'mu_index', 'mu_norm', 'rate', 'se', 'reps']
FEASIBLE_COLUMNS = ['stat', 'n', 'rate', 'se', 'reps', 'sigma_error']
DETAIL_COLUMNS = ['stat', 'cell', 'rep', 'value', 'critical', 'p', 'reject']


# 研究配置，通常来自 JSON：k, sigma ({type: design | matrix | random}), mu, delta_grid, mu_grid, stats,
# alpha, reps, mc_reps, seed, workers, fast；可行水平研究另需 dgp, dgp_options, n_grid, kernel, bandwidth, beta0
class PowerStudyConfig:
    def __init__(self, k: int = 2, sigma: Optional[dict] = None, mu=None, delta_grid=None, mu_grid=None,
                 stats=None, alpha: float = ConditionalParameters.alpha, reps: int = 1000,
                 mc_reps: int = ConditionalParameters.mc_reps, seed: int = DEFAULT_SEED, workers: int = 1,
                 fast: bool = False, dgp: Optional[str] = None, dgp_options: Optional[dict] = None,
                 n_grid=None, kernel: str = 'bartlett', bandwidth='auto', beta0: float = 0.0):
        self.k = int(k)
        self.sigma = sigma or {'type': 'design'}
        self.delta_grid = list(DesignParameters.delta_grid if delta_grid is None else delta_grid)
        self.stats = [s.lower() for s in (stats or ['ar', 'lm', 'qlr', 'lr'])]
        self.alpha = float(alpha)
        self.reps = int(reps)
        self.mc_reps = int(mc_reps)
        self.seed = int(seed)
        self.workers = max(1, int(workers))
        self.fast = bool(fast)
        self.dgp = dgp
        self.dgp_options = dgp_options or {}
        self.n_grid = [int(n) for n in (n_grid or [])]
        self.kernel = kernel
        self.bandwidth = bandwidth
        self.beta0 = float(beta0)

        if len(self.delta_grid) == 0:
            raise ValueError('delta_grid must not be empty')
        if len(self.stats) == 0:
            raise ValueError('stats must not be empty')
        if self.reps < 1:
            raise ValueError(f'reps must be positive. Got {self.reps}.')
        if not 0.0 < self.alpha < 1.0:
            raise ValueError(f'alpha must lie in (0, 1). Got {self.alpha}.')
        for name in self.stats:
            get_statistic(name).check_k(self.k)

        self.Sigma0 = self._build_sigma()
        self.mu = self._default_mu() if mu is None else np.asarray(mu, dtype=float)
        if self.mu.shape != (self.k,):
            raise ValueError(f'mu must have length {self.k}. Got shape {self.mu.shape}.')
        self.mu_grid = self._build_mu_grid(mu_grid)

    def _design(self) -> DesignSpec:
        opts = {key: self.sigma[key] for key in ['c11', 'c12', 'c22', 'lam'] if key in self.sigma}
        return DesignSpec(self.k, **opts)

    def _build_sigma(self) -> np.ndarray:
        kind = self.sigma.get('type', 'design')
        if kind == 'design':
            return low_power_sigma(self._design())
        if kind == 'matrix':
            if 'path' in self.sigma:
                return load_matrix(self.sigma['path'])
            return np.asarray(self.sigma['values'], dtype=float)
        if kind == 'random':
            rng = substream(self.sigma.get('seed', self.seed), 'sigma')
            return random_spd(2 * self.k, rng, self.sigma.get('spread', 1.0))
        raise ValueError(f'unknown sigma type {kind!r}; expected design, matrix or random')

    def _default_mu(self) -> np.ndarray:
        if self.sigma.get('type', 'design') == 'design':
            return self._design().mu
        lam = self.sigma.get('lam', DesignParameters.lam)
        return np.full(self.k, np.sqrt(lam / self.k))

    # 标量表示 mu 方向上的倍数，列表表示完整的 mu
    def _build_mu_grid(self, mu_grid) -> List[np.ndarray]:
        if mu_grid is None:
            return [np.zeros(self.k), self.mu]
        grid = []
        for item in mu_grid:
            if np.isscalar(item):
                grid.append(float(item) * self.mu)
            else:
                grid.append(np.asarray(item, dtype=float))
        if len(grid) == 0:
            raise ValueError('mu_grid must not be empty')
        return grid

    @staticmethod
    def from_dict(config: dict) -> 'PowerStudyConfig':
        return PowerStudyConfig(**config)

    @staticmethod
    def from_json(path: str) -> 'PowerStudyConfig':
        return PowerStudyConfig.from_dict(load_json(path))


def _rate(decisions: np.ndarray) -> Tuple[float, float]:
    rate = float(np.mean(decisions))
    return rate, float(np.sqrt(rate * (1.0 - rate) / decisions.shape[0]))


def _map(func: Callable, items, workers: int) -> list:
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            return list(executor.map(func, items))
    return [func(i) for i in items]


def _test_all(st: STPair, blocks: NullBlocks, config: PowerStudyConfig, seed: int) -> List[TestResult]:
    return [
        run_test_st(st, blocks, name, config.alpha, config.mc_reps, seed, fast=config.fast, workers=1)
        for name in config.stats
    ]


def _simulate_cells(config: PowerStudyConfig, cells: List[ModelParams], tag: str):
    blocks = NullBlocks(config.Sigma0)

    def _replicate(job):
        cell, rep = job
        rng = substream(config.seed, TAG_DATA, tag, cell, rep)
        r0 = draw_r0(cells[cell], rng)
        S, T = blocks.to_st(r0)
        inner = derive_seed(config.seed, TAG_CRITICAL, tag, cell, rep)
        return _test_all(STPair(S, T), blocks, config, inner)

    jobs = [(c, r) for c in range(len(cells)) for r in range(config.reps)]
    results = _map(_replicate, jobs, config.workers)
    # results[c * reps + r][s]
    return np.array(results, dtype=object).reshape(len(cells), config.reps, len(config.stats))


def _details(results: np.ndarray, config: PowerStudyConfig) -> pd.DataFrame:
    rows = []
    for s, name in enumerate(config.stats):
        for c in range(results.shape[0]):
            for r in range(results.shape[1]):
                res = results[c, r, s]
                rows.append({'stat': name, 'cell': c, 'rep': r, 'value': res.value,
                             'critical': res.critical_value, 'p': res.p_value, 'reject': res.reject})
    return pd.DataFrame(rows, columns=DETAIL_COLUMNS)


def power_curve(config: PowerStudyConfig, keep_details: bool = False):
    cells = [ModelParams(delta, config.mu, config.Sigma0) for delta in config.delta_grid]
    logging.info(f'power study: {len(cells)} deltas x {config.reps} reps x {len(config.stats)} stats')
    results = _simulate_cells(config, cells, 'power')

    rows = []
    for s, name in enumerate(config.stats):
        for c, delta in enumerate(config.delta_grid):
            decisions = np.array([res.reject for res in results[c, :, s]], dtype=float)
            rate, se = _rate(decisions)
            rows.append({'stat': name, 'delta': float(delta), 'rate': rate, 'se': se, 'reps': config.reps})
    table = pd.DataFrame(rows, columns=POWER_COLUMNS)
    if keep_details:
        return table, _details(results, config)
    return table


def size_study(config: PowerStudyConfig, keep_details: bool = False):
    cells = [ModelParams(0.0, mu, config.Sigma0) for mu in config.mu_grid]
    logging.info(f'size study: {len(cells)} mu values x {config.reps} reps x {len(config.stats)} stats')
    results = _simulate_cells(config, cells, 'size')

    rows = []
    for s, name in enumerate(config.stats):
        for c, mu in enumerate(config.mu_grid):
            decisions = np.array([res.reject for res in results[c, :, s]], dtype=float)
            rate, se = _rate(decisions)
            rows.append({'stat': name, 'mu_index': c, 'mu_norm': float(np.linalg.norm(mu)),
                         'rate': rate, 'se': se, 'reps': config.reps})
    table = pd.DataFrame(rows, columns=SIZE_COLUMNS)
    if keep_details:
        return table, _details(results, config)
    return table


def feasible_size_study(config: PowerStudyConfig, n_grid=None, dgp=None) -> pd.DataFrame:
    n_grid = config.n_grid if n_grid is None else list(n_grid)
    if len(n_grid) == 0:
        raise ValueError('n_grid must not be empty')
    if dgp is None:
        if config.dgp is None:
            raise ValueError('feasible study needs a dgp')
        options = dict(config.dgp_options)
        options.setdefault('beta', config.beta0)
        dgp = make_dgp(config.dgp, config.k, options)
    true_sigma = dgp.true_sigma()

    def _replicate(job):
        n, rep = job
        rng = substream(config.seed, TAG_DATA, 'feasible', n, rep)
        raw = dgp.draw(n, rng)
        problem, estimate = feasible_problem(raw, config.beta0, config.kernel, config.bandwidth)
        error = np.linalg.norm(estimate.SigmaHat - true_sigma) / np.linalg.norm(true_sigma)
        blocks = problem.blocks
        S, T = blocks.to_st(problem.R0)
        inner = derive_seed(config.seed, TAG_CRITICAL, 'feasible', n, rep)
        return _test_all(STPair(S, T), blocks, config, inner), error

    jobs = [(n, r) for n in n_grid for r in range(config.reps)]
    logging.info(f'feasible size study: n in {n_grid}, {config.reps} reps, dgp {dgp.name}')
    outputs = _map(_replicate, jobs, config.workers)

    rows = []
    for s, name in enumerate(config.stats):
        for i, n in enumerate(n_grid):
            chunk = outputs[i * config.reps:(i + 1) * config.reps]
            decisions = np.array([out[0][s].reject for out in chunk], dtype=float)
            rate, se = _rate(decisions)
            rows.append({'stat': name, 'n': n, 'rate': rate, 'se': se, 'reps': config.reps,
                         'sigma_error': float(np.mean([out[1] for out in chunk]))})
    return pd.DataFrame(rows, columns=FEASIBLE_COLUMNS)
