# ================================
# (R0, Sigma0) 坐标下的约化式 IV 模型
# R = (Z'Z)^{-1/2} Z'Y，vec(R) ~ N(vec(mu a'), Sigma)
# 检验 beta = beta0 时右乘 B0 = [[1, 0], [-beta0, 1]]，R0 第一列均值为 Delta * mu
# ================================
import os
from typing import Tuple

import numpy as np

from settings import LinalgParameters
from tools.utils_cache import load_json, load_matrix
from tools.utils_linalg import NotPositiveDefiniteError, IllConditionedError, check_symmetric, \
    sym_sqrt, sym_inv_sqrt, spd_sqrt, symmetrize, block, unvec


def _as_r(R) -> np.ndarray:
    R = np.asarray(R, dtype=float)
    if R.ndim == 1 and R.shape[0] == 2:
        R = R.reshape(1, 2)
    if R.ndim != 2 or R.shape[1] != 2:
        raise ValueError(f'R must be a k x 2 matrix. Got shape {R.shape}.')
    if not np.all(np.isfinite(R)):
        raise ValueError('R has non-finite entries.')
    return R


def _check_sigma(Sigma, k: int, name: str) -> np.ndarray:
    Sigma = np.asarray(Sigma, dtype=float)
    if Sigma.shape != (2 * k, 2 * k):
        raise ValueError(f'{name} must be {2 * k} x {2 * k}. Got shape {Sigma.shape}.')
    check_symmetric(Sigma, name)
    eig = np.linalg.eigvalsh(symmetrize(Sigma))
    if eig[0] <= 0:
        raise NotPositiveDefiniteError(name, float(eig[0]), float(eig[-1]))
    return symmetrize(Sigma)


def b0_matrix(beta0: float) -> np.ndarray:
    return np.array([[1.0, 0.0], [-float(beta0), 1.0]])


def mean_matrix(delta: float, mu: np.ndarray) -> np.ndarray:
    mu = np.asarray(mu, dtype=float)
    return np.column_stack([delta * mu, mu])


class ReducedForm:
    def __init__(self, R, Sigma):
        self.R = _as_r(R)
        self.k = self.R.shape[0]
        self.Sigma = _check_sigma(Sigma, self.k, 'Sigma')


# S = C R1，T = K (R2 - H R1)，C = Sigma11^{-1/2}，H = Sigma21 Sigma11^{-1}，K = Sigma22.1^{-1/2}
# 不显式构造 Sigma0^{-1}
class NullBlocks:
    def __init__(self, Sigma0: np.ndarray, parameters=LinalgParameters):
        self.Sigma0 = Sigma0
        self.k = k = Sigma0.shape[0] // 2
        self.S11 = block(Sigma0, 0, 0, k)
        self.S12 = block(Sigma0, 0, 1, k)
        self.S21 = block(Sigma0, 1, 0, k)
        self.S22 = block(Sigma0, 1, 1, k)

        self.C = sym_inv_sqrt(self.S11, 'Sigma11', parameters)
        self.C_inv = sym_sqrt(self.S11, 'Sigma11', parameters)
        self.H = np.linalg.solve(self.S11, self.S12).T
        self.S22_1 = symmetrize(self.S22 - self.H @ self.S12)
        self.K = sym_inv_sqrt(self.S22_1, 'Sigma22.1', parameters)
        self.K_inv = sym_sqrt(self.S22_1, 'Sigma22.1', parameters)
        self.KH = self.K @ self.H

    # [S; T] = M vec(R0)
    def st_map(self) -> np.ndarray:
        k = self.k
        m = np.zeros((2 * k, 2 * k))
        m[:k, :k] = self.C
        m[k:, :k] = -self.KH
        m[k:, k:] = self.K
        return m

    def inverse_map(self) -> np.ndarray:
        k = self.k
        m = np.zeros((2 * k, 2 * k))
        m[:k, :k] = self.C_inv
        m[k:, :k] = self.H @ self.C_inv
        m[k:, k:] = self.K_inv
        return m

    # R0 形状 (..., k, 2)，返回 S, T 形状 (..., k)
    def to_st(self, R0: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        R1 = R0[..., 0]
        R2 = R0[..., 1]
        S = R1 @ self.C.T
        T = (R2 - R1 @ self.H.T) @ self.K.T
        return S, T

    def to_r0(self, S: np.ndarray, T: np.ndarray) -> np.ndarray:
        R1 = S @ self.C_inv.T
        R2 = T @ self.K_inv.T + R1 @ self.H.T
        return np.stack([R1, R2], axis=-1)

    # v = C D0^{-1} T = Sigma11^{-1/2} (R2 - H R1)
    def lm_direction(self, T: np.ndarray) -> np.ndarray:
        return T @ (self.C @ self.K_inv).T

    def log_det(self) -> float:
        return float(np.linalg.slogdet(self.S11)[1] + np.linalg.slogdet(self.S22_1)[1])


class NullProblem:
    def __init__(self, R0, Sigma0, beta0: float = 0.0):
        self.R0 = _as_r(R0)
        self.k = self.R0.shape[0]
        self.Sigma0 = _check_sigma(Sigma0, self.k, 'Sigma0')
        self.beta0 = float(beta0)
        self._blocks = None

    @property
    def blocks(self) -> NullBlocks:
        if self._blocks is None:
            self._blocks = NullBlocks(self.Sigma0)
        return self._blocks


class STPair:
    def __init__(self, S, T):
        self.S = np.atleast_1d(np.asarray(S, dtype=float))
        self.T = np.atleast_1d(np.asarray(T, dtype=float))
        assert self.S.shape == self.T.shape, 'S and T must have the same length'
        if not (np.all(np.isfinite(self.S)) and np.all(np.isfinite(self.T))):
            raise ValueError('S and T must be finite.')

    @property
    def k(self) -> int:
        return self.S.shape[0]


class ModelParams:
    def __init__(self, delta: float, mu, Sigma0):
        self.delta = float(delta)
        self.mu = np.atleast_1d(np.asarray(mu, dtype=float))
        self.k = self.mu.shape[0]
        self.Sigma0 = _check_sigma(Sigma0, self.k, 'Sigma0')

    def mean(self) -> np.ndarray:
        return mean_matrix(self.delta, self.mu)

    def to_dict(self) -> dict:
        return {'delta': self.delta, 'mu': self.mu.tolist(), 'sigma0': self.Sigma0.tolist()}

    # {delta, mu, sigma0 | sigma0_path}，sigma0_path 为无表头 CSV，相对路径相对于 base_dir
    @staticmethod
    def from_dict(config: dict, base_dir: str = '') -> 'ModelParams':
        missing = [key for key in ['delta', 'mu'] if key not in config]
        if missing:
            raise ValueError(f'model parameters need {missing}')
        if 'sigma0' in config:
            Sigma0 = np.asarray(config['sigma0'], dtype=float)
        elif 'sigma0_path' in config:
            Sigma0 = load_matrix(os.path.join(base_dir, config['sigma0_path']))
        else:
            raise ValueError('model parameters need sigma0 or sigma0_path')
        return ModelParams(config['delta'], config['mu'], Sigma0)

    @staticmethod
    def from_json(path: str) -> 'ModelParams':
        return ModelParams.from_dict(load_json(path), os.path.dirname(os.path.abspath(path)))


def build_null_problem(R, Sigma, beta0: float) -> NullProblem:
    form = ReducedForm(R, Sigma)
    b0 = b0_matrix(beta0)
    big = np.kron(b0, np.eye(form.k))
    R0 = form.R @ b0
    Sigma0 = symmetrize(big.T @ form.Sigma @ big)
    return NullProblem(R0, Sigma0, beta0)


def st_from_null(problem: NullProblem) -> STPair:
    S, T = problem.blocks.to_st(problem.R0)
    return STPair(S, T)


def compute_st(R, Sigma, beta0: float) -> STPair:
    return st_from_null(build_null_problem(R, Sigma, beta0))


def st_to_r0(st: STPair, Sigma0, parameters=LinalgParameters) -> np.ndarray:
    Sigma0 = _check_sigma(Sigma0, st.k, 'Sigma0')
    blocks = NullBlocks(Sigma0, parameters)
    cond = np.linalg.cond(blocks.st_map())
    if not np.isfinite(cond) or cond > parameters.cond_limit:
        raise IllConditionedError(f'S/T map is ill-conditioned: condition number {cond:.3g}', cond)
    return blocks.to_r0(st.S, st.T)


def log_density_r(r0, params: ModelParams) -> float:
    r0 = _as_r(r0)
    k = params.k
    blocks = NullBlocks(params.Sigma0)
    d = r0 - params.mean()
    S, T = blocks.to_st(d)
    quad = float(S @ S + T @ T)
    return -k * np.log(2 * np.pi) - 0.5 * blocks.log_det() - 0.5 * quad


def density_r(r0, params: ModelParams) -> float:
    return float(np.exp(log_density_r(r0, params)))


def draw_r0(params: ModelParams, rng: np.random.Generator) -> np.ndarray:
    factor = spd_sqrt(params.Sigma0, 'Sigma0')
    z = rng.standard_normal(2 * params.k)
    return params.mean() + unvec(factor @ z, params.k)


# 批量抽样，返回形状 (size, k, 2)
def draw_r0_batch(params: ModelParams, rng: np.random.Generator, size: int) -> np.ndarray:
    k = params.k
    factor = spd_sqrt(params.Sigma0, 'Sigma0')
    z = rng.standard_normal((size, 2 * k))
    draws = (z @ factor.T).reshape(size, 2, k).transpose(0, 2, 1)
    return params.mean()[None, :, :] + draws
