import re
from typing import Optional

import numpy as np
import pandas as pd

from settings import LinalgParameters
from tools.utils_linalg import IllConditionedError, check_spd


# 一个数据集：y1 = y2 beta + u，y2 = Z pi + v2，外生变量 W 可选
class RawSample:
    def __init__(self, y1, y2, Z, W=None, parameters=LinalgParameters):
        self.y1 = np.asarray(y1, dtype=float).ravel()
        self.y2 = np.asarray(y2, dtype=float).ravel()
        self.Z = np.asarray(Z, dtype=float)
        if self.Z.ndim == 1:
            self.Z = self.Z.reshape(-1, 1)
        self.W = None if W is None else np.asarray(W, dtype=float)
        if self.W is not None and self.W.ndim == 1:
            self.W = self.W.reshape(-1, 1)

        n = self.y1.shape[0]
        if self.y2.shape[0] != n or self.Z.shape[0] != n:
            raise ValueError(f'y1, y2 and Z must have the same number of rows. '
                             f'Got {n}, {self.y2.shape[0]}, {self.Z.shape[0]}.')
        if self.W is not None and self.W.shape[0] != n:
            raise ValueError(f'W must have {n} rows. Got {self.W.shape[0]}.')
        if n <= self.k + self.p:
            raise ValueError(f'need n > k + p. Got n={n}, k={self.k}, p={self.p}.')
        for name, value in [('y1', self.y1), ('y2', self.y2), ('Z', self.Z), ('W', self.W)]:
            if value is not None and not np.all(np.isfinite(value)):
                raise ValueError(f'{name} has non-finite entries')

        sv = np.linalg.svd(self.Z, compute_uv=False)
        if sv[-1] <= parameters.rank_tol * sv[0]:
            raise IllConditionedError(f'Z is rank deficient: singular values {sv[-1]:.3g} / {sv[0]:.3g}',
                                      float(sv[0] / max(sv[-1], 1e-300)))

    @property
    def n(self) -> int:
        return self.y1.shape[0]

    @property
    def k(self) -> int:
        return self.Z.shape[1]

    @property
    def p(self) -> int:
        return 0 if self.W is None else self.W.shape[1]

    @property
    def Y(self) -> np.ndarray:
        return np.column_stack([self.y1, self.y2])

    def to_frame(self) -> pd.DataFrame:
        df = pd.DataFrame({'y1': self.y1, 'y2': self.y2})
        for i in range(self.k):
            df[f'z{i + 1}'] = self.Z[:, i]
        for i in range(self.p):
            df[f'w{i + 1}'] = self.W[:, i]
        return df


def _numbered(columns, prefix: str):
    pattern = re.compile(rf'^{prefix}(\d+)$')
    found = [(int(m.group(1)), c) for c in columns for m in [pattern.match(c)] if m]
    return [c for _, c in sorted(found)]


# 列名：y1, y2, z1..zk, 可选 w1..wp
def sample_from_frame(df: pd.DataFrame) -> RawSample:
    df = df.rename(columns=lambda c: str(c).strip().lower())
    for name in ['y1', 'y2']:
        if name not in df.columns:
            raise ValueError(f'dataset is missing column {name!r}')
    z_cols = _numbered(df.columns, 'z')
    if len(z_cols) == 0:
        raise ValueError('dataset has no instrument columns z1..zk')
    w_cols = _numbered(df.columns, 'w')
    try:
        df = df[['y1', 'y2'] + z_cols + w_cols].astype(float)
    except ValueError as e:
        raise ValueError(f'dataset has non-numeric values: {e}')
    return RawSample(df['y1'].values, df['y2'].values, df[z_cols].values,
                     df[w_cols].values if len(w_cols) > 0 else None)


def load_sample_csv(path: str) -> RawSample:
    df = pd.read_csv(path, encoding='utf-8')
    return sample_from_frame(df)


def save_sample_csv(path: str, raw: RawSample) -> None:
    raw.to_frame().to_csv(path, index=False, encoding='utf-8', float_format='%.17g')


# ================================
# 数据生成过程：pi 为弱工具变量的局部参数，实际系数为 pi / sqrt(n)
# ================================

class HomoskedasticDGP:
    name = 'iid'

    def __init__(self, k: int, beta: float = 0.0, pi=None, Omega=None, intercept: bool = False):
        self.k = k
        self.beta = float(beta)
        self.pi = np.full(k, 1.0) if pi is None else np.asarray(pi, dtype=float)
        self.Omega = np.array([[1.0, 0.5], [0.5, 1.0]]) if Omega is None else np.asarray(Omega, dtype=float)
        check_spd(self.Omega, 'Omega')
        self.intercept = intercept

    def _instruments(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, self.k))

    def _errors(self, n: int, rng: np.random.Generator) -> np.ndarray:
        return rng.standard_normal((n, 2)) @ np.linalg.cholesky(self.Omega).T

    def draw(self, n: int, rng: np.random.Generator) -> RawSample:
        Z = self._instruments(n, rng)
        V = self._errors(n, rng)
        y2 = Z @ (self.pi / np.sqrt(n)) + V[:, 1]
        # V 为约化形式误差 [v1, v2]，结构误差 u = v1 - beta v2
        y1 = self.beta * y2 + V[:, 0] - self.beta * V[:, 1]
        W = None
        if self.intercept:
            W = np.ones((n, 1))
            y1 = y1 + 1.0
            y2 = y2 - 1.0
        return RawSample(y1, y2, Z, W)

    def true_sigma(self) -> np.ndarray:
        return np.kron(self.Omega, np.eye(self.k))


# AR(1) 误差与 AR(1) 工具变量，冲击乘以均方为 1 的对数正态波动率
# rho_z 各列不同时长期 Sigma 不是 Kronecker 积
class AutocorrelatedDGP(HomoskedasticDGP):
    name = 'hac'

    def __init__(self, k: int, beta: float = 0.0, pi=None, Omega=None, intercept: bool = False,
                 rho_v=(0.5, 0.3), rho_z=None, vol: float = 0.5, burn: int = 100):
        super().__init__(k, beta, pi, Omega, intercept)
        self.rho_v = np.asarray(rho_v, dtype=float)
        self.rho_z = np.linspace(0.2, 0.6, k) if rho_z is None else np.asarray(rho_z, dtype=float)
        assert np.all(np.abs(self.rho_v) < 1) and np.all(np.abs(self.rho_z) < 1), 'AR(1) must be stationary'
        self.vol = float(vol)
        self.burn = burn

    @staticmethod
    def _ar1(shocks: np.ndarray, rho: np.ndarray) -> np.ndarray:
        out = np.empty_like(shocks)
        state = np.zeros(shocks.shape[1])
        for t in range(shocks.shape[0]):
            state = rho * state + shocks[t]
            out[t] = state
        return out

    def _instruments(self, n, rng):
        shocks = rng.standard_normal((n + self.burn, self.k)) * np.sqrt(1.0 - self.rho_z ** 2)
        return self._ar1(shocks, self.rho_z)[self.burn:]

    def _errors(self, n, rng):
        shocks = super()._errors(n + self.burn, rng)
        scale = np.exp(0.5 * (self.vol * rng.standard_normal(n + self.burn) - 0.5 * self.vol ** 2))
        return self._ar1(shocks * scale[:, None], self.rho_v)[self.burn:]

    # 长期方差：block(i, j) 第 m 个对角元 = Gamma0_ij (1 + r_mi / (1 - r_mi) + r_mj / (1 - r_mj))
    def true_sigma(self) -> np.ndarray:
        rho = self.rho_v
        gamma0 = self.Omega / (1.0 - np.outer(rho, rho))
        sigma = np.zeros((2 * self.k, 2 * self.k))
        for m in range(self.k):
            r = self.rho_z[m] * rho
            factor = 1.0 + (r / (1.0 - r))[:, None] + (r / (1.0 - r))[None, :]
            lr = gamma0 * factor
            for i in range(2):
                for j in range(2):
                    sigma[i * self.k + m, j * self.k + m] = lr[i, j]
        return sigma


DGPS = {cls.name: cls for cls in [HomoskedasticDGP, AutocorrelatedDGP]}


def make_dgp(name: str, k: int, options: Optional[dict] = None):
    if name not in DGPS:
        raise ValueError(f'unknown dgp {name!r}; expected one of {sorted(DGPS)}')
    return DGPS[name](k, **(options or {}))
