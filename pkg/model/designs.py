# ================================
# LM 检验失去功效的协方差设计
# Sigma0 = [[c11 I, c12 J], [c12 J, c22 I]]，J 为反对角阵，mu = lam^{1/2} e1 时正交条件成立
# LM1 均值对任意 Delta 不超过 lam^{1/2} c11^{-1/2} / c12，AR 功效随 Delta 增长
# ================================
import logging
from typing import Optional

import numpy as np
from scipy import stats

from settings import DesignParameters, ConditionalParameters
from tools.utils_linalg import NotPositiveDefiniteError, block, symmetrize


class DesignSpec:
    def __init__(self, k: int = 2, c11: float = DesignParameters.c11, c12: float = DesignParameters.c12,
                 c22: Optional[float] = None, lam: float = DesignParameters.lam, mu_direction=None):
        if k < 2:
            raise ValueError(f'the low-power design needs k >= 2. Got k={k}.')
        if c11 <= 0 or c12 < 0 or lam < 0:
            raise ValueError(f'require c11 > 0, c12 >= 0, lam >= 0. Got c11={c11}, c12={c12}, lam={lam}.')
        if c22 is None:
            if c12 == 0:
                raise ValueError('c22 has no default when c12 = 0')
            # Sigma^{22} = c12^3 I
            c22 = c12 ** 2 / c11 + c12 ** -3
        self.k = int(k)
        self.c11 = float(c11)
        self.c12 = float(c12)
        self.c22 = float(c22)
        self.lam = float(lam)
        if mu_direction is None:
            mu_direction = np.eye(self.k)[0]
        mu_direction = np.asarray(mu_direction, dtype=float)
        if mu_direction.shape != (self.k,):
            raise ValueError(f'mu_direction must have length {self.k}')
        self.mu_direction = mu_direction / np.linalg.norm(mu_direction)

        low, high = design_eigenvalues(self)
        if self.c11 * self.c22 <= self.c12 ** 2 or low <= 0:
            raise NotPositiveDefiniteError('design Sigma0', low, high)

    @property
    def mu(self) -> np.ndarray:
        return np.sqrt(self.lam) * self.mu_direction

    def to_dict(self) -> dict:
        return {'k': self.k, 'c11': self.c11, 'c12': self.c12, 'c22': self.c22, 'lam': self.lam,
                'mu_direction': self.mu_direction.tolist()}


class PartitionedSigma:
    def __init__(self, S11, S12, S21, S22, Sup11, Sup12, Sup21, Sup22):
        self.S11 = S11
        self.S12 = S12
        self.S21 = S21
        self.S22 = S22
        self.Sup11 = Sup11
        self.Sup12 = Sup12
        self.Sup21 = Sup21
        self.Sup22 = Sup22


# 两个特征值，各自重数为 k
def design_eigenvalues(spec: DesignSpec):
    mid = 0.5 * (spec.c11 + spec.c22)
    half = 0.5 * np.sqrt((spec.c11 - spec.c22) ** 2 + 4.0 * spec.c12 ** 2)
    high = mid + half
    # 小特征值由行列式求得，避免相减抵消
    return (spec.c11 * spec.c22 - spec.c12 ** 2) / high, high


def low_power_sigma(spec: DesignSpec) -> np.ndarray:
    k = spec.k
    eye = np.eye(k)
    J = np.fliplr(eye)
    return np.block([[spec.c11 * eye, spec.c12 * J], [spec.c12 * J, spec.c22 * eye]])


def partition_sigma(Sigma) -> PartitionedSigma:
    Sigma = np.asarray(Sigma, dtype=float)
    k = Sigma.shape[0] // 2
    S11, S12 = block(Sigma, 0, 0, k), block(Sigma, 0, 1, k)
    S21, S22 = block(Sigma, 1, 0, k), block(Sigma, 1, 1, k)
    Sup11 = symmetrize(np.linalg.inv(S11 - S12 @ np.linalg.solve(S22, S21)))
    Sup22 = symmetrize(np.linalg.inv(S22 - S21 @ np.linalg.solve(S11, S12)))
    Sup21 = -Sup22 @ S21 @ np.linalg.inv(S11)
    return PartitionedSigma(S11, S12, S21, S22, Sup11, Sup21.T, Sup21, Sup22)


def _sandwich(mu: np.ndarray, Sigma0: np.ndarray):
    k = mu.shape[0]
    S11 = block(Sigma0, 0, 0, k)
    S21 = block(Sigma0, 1, 0, k)
    a = np.linalg.solve(S11, mu)            # Sigma11^{-1} mu
    b = S21 @ a                             # Sigma21 Sigma11^{-1} mu
    return a, b, np.linalg.solve(S11, b)


def orthogonality_gap(mu, Sigma0) -> float:
    mu = np.asarray(mu, dtype=float)
    _, _, c = _sandwich(mu, np.asarray(Sigma0, dtype=float))
    return float(mu @ c)


def _quadratic_forms(mu, Sigma0):
    mu = np.asarray(mu, dtype=float)
    Sigma0 = np.asarray(Sigma0, dtype=float)
    k = mu.shape[0]
    a, b, _ = _sandwich(mu, Sigma0)
    S12 = block(Sigma0, 0, 1, k)
    S11 = block(Sigma0, 0, 0, k)
    # mu' Sigma11^{-1} Sigma12 Sigma11^{-1} Sigma21 Sigma11^{-1} mu
    cross = float(a @ S12 @ np.linalg.solve(S11, b))
    return float(mu @ a), cross


def lm_mean_bound(mu, Sigma0) -> float:
    strength, cross = _quadratic_forms(mu, Sigma0)
    if cross <= 0:
        logging.warning('LM mean bound denominator is zero, bound is infinite')
        return np.inf
    return strength / np.sqrt(cross)


def lm_asymptotic_mean(delta: float, mu, Sigma0, tol: float = 1e-10) -> float:
    gap = orthogonality_gap(mu, Sigma0)
    strength, cross = _quadratic_forms(mu, Sigma0)
    if abs(gap) > tol * max(1.0, strength):
        raise ValueError(f'orthogonality condition fails: gap={gap:.6g}')
    den = np.sqrt(strength + delta ** 2 * cross)
    if den == 0.0:
        return 0.0
    return float(delta * strength / den)


def ar_noncentrality(delta: float, mu, Sigma0) -> float:
    strength, _ = _quadratic_forms(mu, Sigma0)
    return float(delta ** 2 * strength)


# 非中心卡方生存函数：Poisson 加权的中心卡方级数，截断后尾部概率 < tol
def ncx2_sf(x: float, df: int, ncp: float, tol: float = 1e-10) -> float:
    if ncp == 0.0:
        return float(stats.chi2.sf(x, df))
    half = 0.5 * ncp
    upper = int(stats.poisson.isf(tol, half)) + 1
    j = np.arange(upper + 1)
    weights = stats.poisson.pmf(j, half)
    return float(np.clip(np.sum(weights * stats.chi2.sf(x, df + 2 * j)), 0.0, 1.0))


def ar_power_oracle(delta: float, mu, Sigma0, alpha: float = ConditionalParameters.alpha) -> float:
    mu = np.asarray(mu, dtype=float)
    k = mu.shape[0]
    critical = float(stats.chi2.ppf(1.0 - alpha, k))
    return ncx2_sf(critical, k, ar_noncentrality(delta, mu, Sigma0))


def design_report(spec: DesignSpec, alpha: float = ConditionalParameters.alpha, delta_grid=None) -> dict:
    delta_grid = DesignParameters.delta_grid if delta_grid is None else list(delta_grid)
    Sigma0 = low_power_sigma(spec)
    parts = partition_sigma(Sigma0)
    mu = spec.mu
    low, high = design_eigenvalues(spec)
    gap = orthogonality_gap(mu, Sigma0)
    orthogonal = abs(gap) <= 1e-10 * max(1.0, spec.lam)

    rows = []
    for delta in delta_grid:
        rows.append({
            'delta': float(delta),
            'ar_power': ar_power_oracle(delta, mu, Sigma0, alpha),
            'lm_mean': lm_asymptotic_mean(delta, mu, Sigma0) if orthogonal else None,
        })
    logging.info(f'design k={spec.k} c12={spec.c12} lam={spec.lam}: eigenvalues {low:.6g}, {high:.6g}')
    return {
        'spec': spec.to_dict(),
        'alpha': alpha,
        'eigenvalues': [low, high],
        'sigma_sup22_diag': np.diag(parts.Sup22).tolist(),
        'orthogonality_gap': gap,
        'lm_mean_bound': lm_mean_bound(mu, Sigma0),
        'grid': rows,
    }
