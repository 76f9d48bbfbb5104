import logging
from typing import Callable, Tuple, Union

import numpy as np

from model.model_core import NullBlocks, ModelParams, build_null_problem


class CDMatrices:
    def __init__(self, C: np.ndarray, D: np.ndarray):
        self.C = C
        self.D = D


class StatValue:
    def __init__(self, name: str, value: float):
        self.name = name
        self.value = float(value)

    def __repr__(self):
        return f'StatValue({self.name}={self.value:.6g})'


def _blocks(Sigma0) -> NullBlocks:
    if isinstance(Sigma0, NullBlocks):
        return Sigma0
    return NullBlocks(np.asarray(Sigma0, dtype=float))


# C_{beta0} 与 D_beta，经 R0 坐标计算：D_beta = K (I - Delta H)
def cd_matrices(Sigma, beta: float, beta0: float) -> CDMatrices:
    Sigma = np.asarray(Sigma, dtype=float)
    k = Sigma.shape[0] // 2
    problem = build_null_problem(np.zeros((k, 2)), Sigma, beta0)
    blocks = problem.blocks
    delta = beta - beta0
    D = blocks.K @ (np.eye(k) - delta * blocks.H)
    return CDMatrices(blocks.C, D)


def mean_st(params: ModelParams) -> Tuple[np.ndarray, np.ndarray]:
    blocks = NullBlocks(params.Sigma0)
    mean_s = params.delta * (blocks.C @ params.mu)
    mean_t = blocks.K @ (params.mu - params.delta * (blocks.H @ params.mu))
    return mean_s, mean_t


# ===============
# 批量版本：S 为 (m, k)，t 为固定的 k 向量
# ===============

def ar_values(S: np.ndarray) -> np.ndarray:
    return np.einsum('...i,...i->...', S, S)


def lm1_values(S: np.ndarray, v: np.ndarray) -> np.ndarray:
    vv = float(v @ v)
    if vv == 0.0:
        logging.warning('LM direction is zero, LM1 set to 0')
        return np.zeros(S.shape[:-1])
    return (S @ v) / np.sqrt(vv)


def lm_values(S: np.ndarray, v: np.ndarray) -> np.ndarray:
    return lm1_values(S, v) ** 2


def qlr_values(ar_value, lm_value, r_t: float) -> np.ndarray:
    gap = ar_value - r_t
    return 0.5 * (gap + np.sqrt(gap * gap + 4.0 * lm_value * r_t))


def clc_values(ar_value, lm_value, weight: float) -> np.ndarray:
    return ar_value - weight * lm_value


# ===============
# 单个数据点的统计量
# ===============

def ar(S) -> float:
    S = np.asarray(S, dtype=float)
    return float(S @ S)


def lm2(S, T, Sigma0) -> float:
    blocks = _blocks(Sigma0)
    v = blocks.lm_direction(np.asarray(T, dtype=float))
    return float(lm_values(np.asarray(S, dtype=float), v))


def lm1(S, T, Sigma0) -> float:
    blocks = _blocks(Sigma0)
    v = blocks.lm_direction(np.asarray(T, dtype=float))
    return float(lm1_values(np.asarray(S, dtype=float), v))


def qlr(S, T, Sigma0) -> float:
    T = np.asarray(T, dtype=float)
    return float(qlr_values(ar(S), lm2(S, T, Sigma0), float(T @ T)))


def resolve_weight(m: Union[float, Callable], T: np.ndarray) -> float:
    weight = float(m(T)) if callable(m) else float(m)
    if not 0.0 <= weight <= 1.0 or not np.isfinite(weight):
        raise ValueError(f'CLC weight m(T) must lie in [0, 1]. Got {weight}.')
    return weight


# CLC = m(T) (AR - LM) + (1 - m(T)) AR
def clc(S, T, Sigma0, m: Union[float, Callable] = 0.5) -> float:
    T = np.asarray(T, dtype=float)
    weight = resolve_weight(m, T)
    return float(clc_values(ar(S), lm2(S, T, Sigma0), weight))
