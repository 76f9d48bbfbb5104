# ================================
# 可行检验：由原始数据得到约化式与 Sigma 的 HAC 估计
# Sigma_hat = (I2 (x) (Z'Z)^{-1/2}) Omega_hat (I2 (x) (Z'Z)^{-1/2})，Omega_hat 为 v_t (x) z_t 的核加权长期和
# ================================
import math
import logging
from typing import Optional, Tuple, Union

import numpy as np

from settings import HacParameters, ConditionalParameters, StatParameters
from model.model_core import NullProblem, build_null_problem, b0_matrix
from reader.reader_sample import RawSample
from tester.conditional import run_test, TestResult
from tools.utils_linalg import sym_inv_sqrt, symmetrize


class HacEstimate:
    def __init__(self, SigmaHat: np.ndarray, bandwidth: int, kernel: str, psd_repaired: bool):
        self.SigmaHat = SigmaHat
        self.bandwidth = int(bandwidth)
        self.kernel = kernel
        self.psd_repaired = bool(psd_repaired)

    @property
    def k(self) -> int:
        return self.SigmaHat.shape[0] // 2

    def sigma0(self, beta0: float) -> np.ndarray:
        big = np.kron(b0_matrix(beta0), np.eye(self.k))
        return symmetrize(big.T @ self.SigmaHat @ big)

    def to_dict(self) -> dict:
        return {'bandwidth': self.bandwidth, 'kernel': self.kernel, 'psd_repaired': self.psd_repaired}


# 用 W 做投影，剔除外生变量
def partial_out(raw: RawSample) -> Tuple[np.ndarray, np.ndarray]:
    Y = raw.Y
    Z = raw.Z
    if raw.W is not None:
        coef = np.linalg.lstsq(raw.W, np.column_stack([Y, Z]), rcond=None)[0]
        resid = np.column_stack([Y, Z]) - raw.W @ coef
        Y, Z = resid[:, :2], resid[:, 2:]
        sv = np.linalg.svd(Z, compute_uv=False)
        if sv[-1] <= 1e-10 * sv[0]:
            raise ValueError('instruments are collinear with the exogenous covariates')
    return Y, Z


def _reduced_form(Y: np.ndarray, Z: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
    ZZ = symmetrize(Z.T @ Z)
    ZY = Z.T @ Y
    R = sym_inv_sqrt(ZZ, "Z'Z") @ ZY
    Vhat = Y - Z @ np.linalg.solve(ZZ, ZY)
    return R, Vhat


def reduced_form(raw: RawSample) -> Tuple[np.ndarray, np.ndarray]:
    Y, Z = partial_out(raw)
    return _reduced_form(Y, Z)


def auto_bandwidth(n: int) -> int:
    return int(math.floor(4.0 * (n / 100.0) ** (2.0 / 9.0)))


def kernel_weights(kernel: str, bandwidth: int) -> np.ndarray:
    lags = np.arange(bandwidth + 1)
    z = lags / (bandwidth + 1.0)
    if kernel == 'bartlett':
        return 1.0 - z
    if kernel == 'parzen':
        return np.where(z <= 0.5, 1.0 - 6.0 * z ** 2 + 6.0 * z ** 3, 2.0 * (1.0 - z) ** 3)
    raise ValueError(f'unknown kernel {kernel!r}; expected bartlett or parzen')


def hac_sigma(Z, Vhat, kernel: str = HacParameters.kernel, bandwidth: Union[int, str] = HacParameters.bandwidth,
              parameters=HacParameters) -> HacEstimate:
    Z = np.asarray(Z, dtype=float)
    Vhat = np.asarray(Vhat, dtype=float)
    n, k = Z.shape
    if Vhat.shape != (n, 2):
        raise ValueError(f'Vhat must be {n} x 2. Got shape {Vhat.shape}.')
    if not np.any(Vhat):
        raise ValueError('residuals are all zero, Sigma cannot be estimated')
    L = auto_bandwidth(n) if bandwidth == 'auto' else int(bandwidth)
    if L < 0 or n <= 2 * L:
        raise ValueError(f'bandwidth must satisfy 0 <= L < n / 2. Got L={L}, n={n}.')

    # x_t = v_t (x) z_t，前 k 列对应 v1
    X = np.hstack([Vhat[:, [0]] * Z, Vhat[:, [1]] * Z])
    weights = kernel_weights(kernel, L)
    omega = X.T @ X
    for lag in range(1, L + 1):
        gamma = X[lag:].T @ X[:-lag]
        omega += weights[lag] * (gamma + gamma.T)

    scale = np.kron(np.eye(2), sym_inv_sqrt(symmetrize(Z.T @ Z), "Z'Z"))
    sigma = symmetrize(scale @ omega @ scale)

    floor = parameters.clip_factor * np.trace(sigma) / (2 * k)
    w, e = np.linalg.eigh(sigma)
    repaired = bool(w[0] < floor)
    if repaired:
        logging.warning(f'HAC Sigma repaired: min eigenvalue {w[0]:.3g} clipped to {floor:.3g}')
        sigma = symmetrize((e * np.maximum(w, floor)) @ e.T)
    logging.debug(f'HAC kernel={kernel} bandwidth={L} n={n}')
    return HacEstimate(sigma, L, kernel, repaired)


def feasible_problem(raw: RawSample, beta0: float, kernel: str = HacParameters.kernel,
                     bandwidth: Union[int, str] = HacParameters.bandwidth,
                     sigma_override: Optional[np.ndarray] = None) -> Tuple[NullProblem, Optional[HacEstimate]]:
    Y, Z = partial_out(raw)
    R, Vhat = _reduced_form(Y, Z)
    estimate = None
    if sigma_override is None:
        estimate = hac_sigma(Z, Vhat, kernel, bandwidth)
        sigma = estimate.SigmaHat
    else:
        sigma = np.asarray(sigma_override, dtype=float)
    return build_null_problem(R, sigma, beta0), estimate


def feasible_test(raw: RawSample, beta0: float, stat, alpha: float = ConditionalParameters.alpha,
                  M: int = ConditionalParameters.mc_reps, seed: int = 0,
                  kernel: str = HacParameters.kernel, bandwidth: Union[int, str] = HacParameters.bandwidth,
                  sigma_override: Optional[np.ndarray] = None,
                  parameters=ConditionalParameters, stat_parameters=StatParameters,
                  workers: Optional[int] = None, fast: bool = False) -> TestResult:
    problem, _ = feasible_problem(raw, beta0, kernel, bandwidth, sigma_override)
    return run_test(problem, stat, alpha, M, seed, parameters, stat_parameters, workers, fast)
