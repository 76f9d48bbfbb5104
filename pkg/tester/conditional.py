# ================================
# 条件临界值与条件检验：H0 下 S ~ N(0, I_k) 与 T 独立，固定 t 与 Sigma0 模拟 S
# 抽样来自 (seed, 统计量, 块序号) 的 Philox 子流，结果与线程数无关
# ================================
import math
import logging
from concurrent.futures import ThreadPoolExecutor
from typing import Optional, Union

import numpy as np
from scipy import stats

from settings import ConditionalParameters, StatParameters
from model.model_core import NullBlocks, NullProblem, STPair, st_from_null
from statistic.statistic_components import BaseStatistic, get_statistic
from tools.utils_random import substream, TAG_CRITICAL


class TestResult:
    __test__ = False

    def __init__(self, statistic: str, value: float, critical_value: float, p_value: float,
                 alpha: float, mc_reps: int, seed: int, scale: str = 'level'):
        self.statistic = statistic
        self.value = float(value)
        self.critical_value = float(critical_value)
        self.p_value = float(p_value)
        self.reject = bool(self.value > self.critical_value)
        self.alpha = float(alpha)
        self.mc_reps = int(mc_reps)
        self.seed = int(seed)
        self.scale = scale

    def to_dict(self) -> dict:
        return {
            'statistic': self.statistic,
            'value': self.value,
            'critical_value': self.critical_value,
            'p_value': self.p_value,
            'reject': self.reject,
            'alpha': self.alpha,
            'mc_reps': self.mc_reps,
            'seed': self.seed,
            'scale': self.scale,
        }

    def to_row(self) -> dict:
        return {
            'stat': self.statistic,
            'value': self.value,
            'critical': self.critical_value,
            'p': self.p_value,
            'reject': self.reject,
        }

    def __repr__(self):
        return (f'TestResult({self.statistic}: value={self.value:.6g} '
                f'critical={self.critical_value:.6g} p={self.p_value:.4f} reject={self.reject})')


def _resolve(stat: Union[str, BaseStatistic], stat_parameters) -> BaseStatistic:
    if isinstance(stat, BaseStatistic):
        return stat
    return get_statistic(stat, stat_parameters)


def _blocks(Sigma0) -> NullBlocks:
    if isinstance(Sigma0, NullBlocks):
        return Sigma0
    return NullBlocks(np.asarray(Sigma0, dtype=float))


# 抽样坐标系随 (t, Sigma0) 协变：第一列为 LM 方向，其余为
# Sigma11^{-1/2} Sigma22.1 Sigma11^{-1/2} 在其正交补上的特征向量
def draw_frame(blocks: NullBlocks, t: np.ndarray, parameters=ConditionalParameters) -> np.ndarray:
    k = blocks.k
    v = blocks.lm_direction(np.asarray(t, dtype=float))
    norm = float(np.linalg.norm(v))
    if norm == 0.0:
        return np.eye(k)
    v_hat = v / norm
    if k == 1:
        return v_hat.reshape(1, 1)

    W = blocks.C @ blocks.S22_1 @ blocks.C
    P = np.eye(k) - np.outer(v_hat, v_hat)
    w, e = np.linalg.eigh(P @ W @ P)
    order = np.argsort(w)[::-1][:k - 1]
    w, e = w[order], e[:, order]

    # 重特征值的特征空间内基底不唯一，改用 Krylov 向量 W^j v 的投影
    tie = parameters.frame_tie_tol * max(1.0, float(np.max(np.abs(w))))
    start = 0
    while start < k - 1:
        stop = start + 1
        while stop < k - 1 and w[start] - w[stop] <= tie:
            stop += 1
        if stop - start > 1:
            e[:, start:stop] = _split_tied(e[:, start:stop], W, v_hat)
        start = stop

    anchor = W @ v_hat
    for i in range(k - 1):
        s = float(e[:, i] @ anchor)
        if abs(s) > 1e-12 * np.linalg.norm(anchor):
            e[:, i] *= np.sign(s)
        else:
            first = np.flatnonzero(np.abs(e[:, i]) > 1e-12)[0]
            e[:, i] *= np.sign(e[first, i])
    return np.column_stack([v_hat, e])


# 在特征空间 span(E) 内对 W v, W^2 v, ... 做 Gram-Schmidt；剩余方向上问题本身对称，取 E 的正交补即可
def _split_tied(E: np.ndarray, W: np.ndarray, v_hat: np.ndarray) -> np.ndarray:
    dim = E.shape[1]
    basis = []
    a = v_hat
    for _ in range(W.shape[0]):
        a = W @ a
        a = a / np.linalg.norm(a)
        p = E @ (E.T @ a)
        for b in basis:
            p = p - (b @ p) * b
        if np.linalg.norm(p) > 1e-8:
            basis.append(p / np.linalg.norm(p))
        if len(basis) == dim:
            break
    if len(basis) < dim:
        rest = E
        if basis:
            B = np.column_stack(basis)
            rest = E - B @ (B.T @ E)
        u, _, _ = np.linalg.svd(rest, full_matrices=False)
        basis.extend(u[:, :dim - len(basis)].T)
    return np.column_stack(basis)


def simulate_null(stat: Union[str, BaseStatistic], t, Sigma0, M: int, seed: int,
                  parameters=ConditionalParameters, stat_parameters=StatParameters,
                  workers: Optional[int] = None) -> np.ndarray:
    if M < parameters.min_reps:
        raise ValueError(f'M must be at least {parameters.min_reps}. Got {M}.')
    statistic = _resolve(stat, stat_parameters)
    blocks = _blocks(Sigma0)
    t = np.asarray(t, dtype=float)
    statistic.check_k(blocks.k)
    frame = draw_frame(blocks, t, parameters)
    chunk = parameters.chunk
    n_chunks = math.ceil(M / chunk)

    def _run(index: int) -> np.ndarray:
        size = min(chunk, M - index * chunk)
        rng = substream(seed, TAG_CRITICAL, statistic.name, index)
        z = rng.standard_normal((size, blocks.k))
        return statistic.values(z @ frame.T, t, blocks)

    workers = workers or parameters.workers
    if workers > 1 and n_chunks > 1:
        with ThreadPoolExecutor(max_workers=workers) as executor:
            parts = list(executor.map(_run, range(n_chunks)))
    else:
        parts = [_run(i) for i in range(n_chunks)]
    return np.concatenate(parts)


def _order_index(M: int, alpha: float) -> int:
    if not 0.0 < alpha < 1.0:
        raise ValueError(f'alpha must lie in (0, 1). Got {alpha}.')
    index = int(math.ceil((1.0 - alpha) * M - 1e-9))
    return min(max(index, 1), M)


# 第 ceil((1-alpha) M) 个顺序统计量
def order_statistic(values: np.ndarray, alpha: float) -> float:
    index = _order_index(values.shape[0], alpha)
    return float(np.sort(values)[index - 1])


def empirical_pvalue(values: np.ndarray, observed: float) -> float:
    return float((1 + np.count_nonzero(values >= observed)) / (values.shape[0] + 1))


# 同一组模拟值下 reject <=> p <= pvalue_threshold，阈值比 alpha 略大（M = 1000 时为 51/1001）
def pvalue_threshold(M: int, alpha: float) -> float:
    return (1 + M - _order_index(M, alpha)) / (M + 1)


def conditional_quantile(stat, t, Sigma0, alpha: float, M: int, seed: int,
                         parameters=ConditionalParameters, stat_parameters=StatParameters,
                         workers: Optional[int] = None) -> float:
    values = simulate_null(stat, t, Sigma0, M, seed, parameters, stat_parameters, workers)
    return order_statistic(values, alpha)


# observed 与统计量同一刻度（IL 为对数刻度）
def conditional_pvalue(stat, observed: float, t, Sigma0, M: int, seed: int,
                       parameters=ConditionalParameters, stat_parameters=StatParameters,
                       workers: Optional[int] = None) -> float:
    values = simulate_null(stat, t, Sigma0, M, seed, parameters, stat_parameters, workers)
    return empirical_pvalue(values, observed)


# 已知 (S, T) 与 Sigma0 分块时的条件检验，模拟研究中 Sigma0 固定，分块只算一次
def run_test_st(st: STPair, blocks: NullBlocks, stat, alpha: float, M: int, seed: int,
                parameters=ConditionalParameters, stat_parameters=StatParameters,
                workers: Optional[int] = None, fast: bool = False) -> TestResult:
    statistic = _resolve(stat, stat_parameters)
    statistic.check_k(blocks.k)
    value = statistic.evaluate(st, blocks).value

    df = statistic.chi_square_df(blocks.k)
    if fast and df is not None:
        critical = float(stats.chi2.ppf(1.0 - alpha, df))
        p_value = float(stats.chi2.sf(value, df))
    else:
        values = simulate_null(statistic, st.T, blocks, M, seed, parameters, stat_parameters, workers)
        critical = order_statistic(values, alpha)
        p_value = empirical_pvalue(values, value)

    result = TestResult(statistic.name, value, critical, p_value, alpha, M, seed,
                        'log' if statistic.log_scale else 'level')
    logging.debug(f'{result}')
    return result


def run_test(problem: NullProblem, stat, alpha: float, M: int, seed: int,
             parameters=ConditionalParameters, stat_parameters=StatParameters,
             workers: Optional[int] = None, fast: bool = False) -> TestResult:
    return run_test_st(st_from_null(problem), problem.blocks, stat, alpha, M, seed,
                       parameters, stat_parameters, workers, fast)
