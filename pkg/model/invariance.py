# ================================
# 模型对称群 g = (g1, g2)，g1 可逆，g2 = [[g11, 0], [s, g22]]
# 数据：(R0, Sigma0) -> (g1 R0 g2', (g2 (x) g1) Sigma0 (g2 (x) g1)')
# 参数：Delta -> g11 Delta / (s Delta + g22)，mu -> g1 mu (s Delta + g22)
# ================================
import logging
from typing import Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss

from settings import GroupParameters
from model.model_core import NullProblem, ModelParams, STPair
from tools.utils_linalg import NumericFailure, symmetrize, sym_sqrt, sym_inv_sqrt


class GroupElement:
    def __init__(self, g1, g2):
        self.g1 = np.atleast_2d(np.asarray(g1, dtype=float))
        self.g2 = np.asarray(g2, dtype=float)
        if self.g1.shape[0] != self.g1.shape[1]:
            raise ValueError(f'g1 must be square. Got shape {self.g1.shape}.')
        if self.g2.shape != (2, 2):
            raise ValueError(f'g2 must be 2 x 2. Got shape {self.g2.shape}.')
        if abs(np.linalg.det(self.g1)) <= 1e-10:
            raise ValueError('g1 must be invertible (|det g1| > 1e-10).')
        if self.g2[0, 1] != 0.0:
            raise ValueError('g2 must be lower triangular.')
        if self.g2[0, 0] == 0.0 or self.g2[1, 1] == 0.0:
            raise ValueError('g2 must have a non-zero diagonal.')

    @property
    def k(self) -> int:
        return self.g1.shape[0]

    @property
    def g11(self) -> float:
        return float(self.g2[0, 0])

    @property
    def g21(self) -> float:
        return float(self.g2[1, 0])

    @property
    def g22(self) -> float:
        return float(self.g2[1, 1])

    def kron(self) -> np.ndarray:
        return np.kron(self.g2, self.g1)

    def compose(self, other: 'GroupElement') -> 'GroupElement':
        return GroupElement(self.g1 @ other.g1, self.g2 @ other.g2)

    def inverse(self) -> 'GroupElement':
        return GroupElement(np.linalg.inv(self.g1), np.linalg.inv(self.g2))

    @staticmethod
    def identity(k: int) -> 'GroupElement':
        return GroupElement(np.eye(k), np.eye(2))


class Multiplier:
    def __init__(self, chi1: float, chi2: float):
        self.chi1 = float(chi1)
        self.chi2 = float(chi2)
        self.chi = self.chi1 * self.chi2


def act_data(g: GroupElement, problem: NullProblem) -> NullProblem:
    big = g.kron()
    R0 = g.g1 @ problem.R0 @ g.g2.T
    Sigma0 = symmetrize(big @ problem.Sigma0 @ big.T)
    return NullProblem(R0, Sigma0, problem.beta0)


def _denominator(g: GroupElement, delta: float) -> float:
    den = delta * g.g21 + g.g22
    if abs(den) < 1e-12:
        raise ValueError(f'Delta={delta} is excluded by g (zero denominator).')
    return den


def act_params(g: GroupElement, params: ModelParams) -> ModelParams:
    den = _denominator(g, params.delta)
    big = g.kron()
    return ModelParams(params.delta * g.g11 / den, g.g1 @ params.mu * den,
                       symmetrize(big @ params.Sigma0 @ big.T))


def multiplier(g: GroupElement, k: int) -> Multiplier:
    return Multiplier(np.linalg.det(g.g1) ** 2, abs(np.linalg.det(g.g2)) ** k)


# IL 与权重测度 |Delta|^{k-2} dDelta x dmu 的相对不变乘子
def il_multiplier(g: GroupElement, k: int) -> float:
    return float(abs(np.linalg.det(g.g1)) * abs(g.g11) ** (k - 1) * abs(g.g22))


def induced_st_action(g2, st: STPair) -> STPair:
    g2 = np.asarray(g2, dtype=float)
    return STPair(np.sign(g2[0, 0]) * st.S, np.sign(g2[1, 1]) * st.T)


# 非 Kronecker 情形：S -> sgn(g11) U1 S, T -> sgn(g22) U2 T，U1, U2 为正交矩阵
def induced_st_general(g: GroupElement, problem: NullProblem) -> Tuple[np.ndarray, np.ndarray]:
    blocks = problem.blocks
    g1 = g.g1
    u1 = sym_inv_sqrt(g1 @ blocks.S11 @ g1.T) @ g1 @ sym_sqrt(blocks.S11)
    u2 = sym_inv_sqrt(g1 @ blocks.S22_1 @ g1.T) @ g1 @ blocks.K_inv
    return np.sign(g.g11) * u1, np.sign(g.g22) * u2


def sample_group(k: int, rng: np.random.Generator, scale: float = 1.0, allow_sign_flip: bool = False,
                 parameters=GroupParameters) -> GroupElement:
    for _ in range(parameters.resample_budget):
        g1 = rng.uniform(-scale, scale, size=(k, k))
        det = abs(np.linalg.det(g1))
        if det > parameters.min_det_ratio * scale ** k and np.linalg.cond(g1) < parameters.max_cond:
            break
    else:
        raise NumericFailure('could not sample a well-conditioned g1',
                             trace=[('budget', parameters.resample_budget)])
    diag = rng.uniform(parameters.diag_low, parameters.diag_high, size=2)
    if allow_sign_flip:
        diag = diag * rng.choice([-1.0, 1.0], size=2)
    off = rng.uniform(-parameters.offdiag, parameters.offdiag)
    return GroupElement(g1, np.array([[diag[0], 0.0], [off, diag[1]]]))


# ================================
# 权重测度的相对不变性：k = 2 时在 (Delta, mu1, mu2) 上做张量积求积
# ================================

class WeightCheckReport:
    def __init__(self):
        self.rows = []

    def add(self, bump: int, group: int, measured: float, expected: float):
        self.rows.append({'bump': bump, 'group': group, 'measured': measured, 'expected': expected,
                          'rel_error': abs(measured / expected - 1.0)})

    @property
    def max_rel_error(self) -> float:
        return max((r['rel_error'] for r in self.rows), default=0.0)

    def to_dict(self) -> dict:
        return {'max_rel_error': self.max_rel_error, 'rows': self.rows}


class GaussianBump:
    def __init__(self, delta: float, mu, w_delta: float, w_mu: float):
        self.delta = delta
        self.mu = np.asarray(mu, dtype=float)
        self.w_delta = w_delta
        self.w_mu = w_mu

    def __call__(self, delta, mu):
        z = ((delta - self.delta) / self.w_delta) ** 2
        z = z + np.sum(((mu - self.mu) / self.w_mu) ** 2, axis=-1)
        return np.exp(-0.5 * z)

    # k = 2 时 |Delta|^0 = 1，积分解析可得
    def integral(self) -> float:
        return float((2 * np.pi) ** 1.5 * self.w_delta * self.w_mu ** 2)

    def box(self, width: float = 8.0):
        lo = np.concatenate([[self.delta - width * self.w_delta], self.mu - width * self.w_mu])
        hi = np.concatenate([[self.delta + width * self.w_delta], self.mu + width * self.w_mu])
        return lo, hi


def _gl_axis(lo: float, hi: float, panels: int, nodes: int):
    x, w = leggauss(nodes)
    edges = np.linspace(lo, hi, panels + 1)
    half = 0.5 * np.diff(edges)
    mid = 0.5 * (edges[1:] + edges[:-1])
    return (mid[:, None] + half[:, None] * x).ravel(), (half[:, None] * w).ravel()


def _image_box(g: GroupElement, lo: np.ndarray, hi: np.ndarray):
    corners = np.array(np.meshgrid(*[[lo[i], hi[i]] for i in range(3)], indexing='ij')).reshape(3, -1).T
    images = []
    for c in corners:
        den = _denominator(g, c[0])
        images.append(np.concatenate([[c[0] * g.g11 / den], g.g1 @ c[1:] * den]))
    images = np.array(images)
    return images.min(axis=0), images.max(axis=0)


def relative_invariance_of_weight(k: int = 2, seed: int = 0, groups: int = 10,
                                  panels: int = 4, nodes: int = 24) -> WeightCheckReport:
    if k < 2:
        raise ValueError('the weight measure requires k >= 2')
    if k != 2:
        raise ValueError('the tensor quadrature check is implemented for k = 2')
    rng = np.random.default_rng(seed)
    bumps = [GaussianBump(0.4, [0.5, -0.3], 0.1, 0.3),
             GaussianBump(-0.5, [-0.2, 0.4], 0.1, 0.3),
             GaussianBump(0.8, [0.1, 0.1], 0.1, 0.3)]
    report = WeightCheckReport()
    for gi in range(groups):
        g1 = np.eye(2) + 0.3 * rng.uniform(-1.0, 1.0, size=(2, 2))
        diag = rng.uniform(0.5, 2.0, size=2)
        g = GroupElement(g1, np.array([[diag[0], 0.0], [rng.uniform(-0.25, 0.25), diag[1]]]))
        g_inv = g.inverse()
        for bi, bump in enumerate(bumps):
            lo, hi = _image_box(g, *bump.box())
            axes = [_gl_axis(lo[i], hi[i], panels, nodes) for i in range(3)]
            d, m1, m2 = np.meshgrid(axes[0][0], axes[1][0], axes[2][0], indexing='ij')
            w = axes[0][1][:, None, None] * axes[1][1][None, :, None] * axes[2][1][None, None, :]
            den = d * g_inv.g21 + g_inv.g22
            d_pre = d * g_inv.g11 / den
            mu = np.stack([m1, m2], axis=-1)
            mu_pre = np.einsum('ij,...j->...i', g_inv.g1, mu) * den[..., None]
            measured = float(np.sum(w * bump(d_pre, mu_pre))) / bump.integral()
            report.add(bi, gi, measured, il_multiplier(g, k))
    logging.info(f'weight relative invariance max error {report.max_rel_error:.3g}')
    return report
