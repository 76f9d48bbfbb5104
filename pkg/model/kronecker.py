# ================================
# Kronecker 协方差 Sigma = Omega (x) Phi 及其不变量
# ================================
import logging
from typing import Dict, Optional, Tuple

import numpy as np
from scipy.special import ive, gammaln

from model.model_core import STPair, NullBlocks
from tools.utils_linalg import NotPositiveDefiniteError, IllConditionedError, NumericFailure, check_spd, \
    sym_inv_sqrt, lower_factor, symmetrize, block


class KroneckerCov:
    def __init__(self, Omega, Phi, tol: float = 1e-10):
        self.Omega = np.asarray(Omega, dtype=float)
        self.Phi = np.asarray(Phi, dtype=float)
        check_spd(self.Omega, 'Omega')
        check_spd(self.Phi, 'Phi')
        det = float(np.linalg.det(self.Phi))
        if abs(det - 1.0) >= tol:
            raise ValueError(f'Phi must have determinant 1. Got {det:.12g}.')

    @property
    def k(self) -> int:
        return self.Phi.shape[0]

    def sigma(self) -> np.ndarray:
        return np.kron(self.Omega, self.Phi)

    def omega0(self, beta0: float) -> np.ndarray:
        b0 = np.array([[1.0, 0.0], [-beta0, 1.0]])
        return b0.T @ self.Omega @ b0


class QMatrix:
    def __init__(self, qS: float, qST: float, qT: float):
        self.qS = float(qS)
        self.qST = float(qST)
        self.qT = float(qT)
        assert self.qS >= 0 and self.qT >= 0, 'Q diagonal must be non-negative'

    def det(self) -> float:
        return self.qS * self.qT - self.qST ** 2

    def matrix(self) -> np.ndarray:
        return np.array([[self.qS, self.qST], [self.qST, self.qT]])


class StructuralCov:
    def __init__(self, Psi):
        self.Psi = np.asarray(Psi, dtype=float)
        check_spd(self.Psi, 'Psi')

    @property
    def sigma_uu(self) -> float:
        return float(self.Psi[0, 0])

    @property
    def sigma_u2(self) -> float:
        return float(self.Psi[0, 1])

    @property
    def sigma_22(self) -> float:
        return float(self.Psi[1, 1])


def _a0_b0(beta0: float) -> Tuple[np.ndarray, np.ndarray]:
    return np.array([beta0, 1.0]), np.array([1.0, -beta0])


def st_kron(R, Omega, Phi, beta0: float) -> STPair:
    R = np.asarray(R, dtype=float).reshape(-1, 2)
    Omega = np.asarray(Omega, dtype=float)
    a0, b0 = _a0_b0(beta0)
    phi_inv_half = sym_inv_sqrt(Phi, 'Phi')
    omega_inv = np.linalg.inv(Omega)
    S = phi_inv_half @ R @ b0 / np.sqrt(b0 @ Omega @ b0)
    T = phi_inv_half @ R @ omega_inv @ a0 / np.sqrt(a0 @ omega_inv @ a0)
    return STPair(S, T)


def q_matrix(st: STPair) -> QMatrix:
    return QMatrix(st.S @ st.S, st.S @ st.T, st.T @ st.T)


def lambda_conc(mu, Phi) -> float:
    mu = np.asarray(mu, dtype=float)
    return float(mu @ np.linalg.solve(Phi, mu))


# c_beta = (beta - beta0)(b0' Omega b0)^{-1/2}, d_beta = a' Omega^{-1} a0 (a0' Omega^{-1} a0)^{-1/2}
def cd_scalars(beta: float, beta0: float, Omega) -> Tuple[float, float]:
    Omega = np.asarray(Omega, dtype=float)
    a0, b0 = _a0_b0(beta0)
    a = np.array([beta, 1.0])
    omega_inv = np.linalg.inv(Omega)
    c = (beta - beta0) / np.sqrt(b0 @ Omega @ b0)
    d = (a @ omega_inv @ a0) / np.sqrt(a0 @ omega_inv @ a0)
    return float(c), float(d)


def beta_ar(beta0: float, Omega) -> float:
    Omega = np.asarray(Omega, dtype=float)
    num = Omega[0, 0] - Omega[0, 1] * beta0
    den = Omega[0, 1] - Omega[1, 1] * beta0
    if abs(den) <= 1e-14 * max(1.0, abs(num)):
        return np.inf
    return float(num / den)


# j / d0 = e1' Omega^{-1} a0 / (a0' Omega^{-1} a0)，与 d 的指数约定无关
def _j_over_d0(beta0: float, Omega) -> float:
    a0, _ = _a0_b0(beta0)
    omega_inv = np.linalg.inv(np.asarray(Omega, dtype=float))
    return float(omega_inv[0] @ a0 / (a0 @ omega_inv @ a0))


# 双边映射的极点：d0 + 2 j (beta - beta0) = 0
def singular_beta(beta0: float, Omega) -> float:
    ratio = _j_over_d0(beta0, Omega)
    if ratio == 0.0:
        return np.inf
    return beta0 - 0.5 / ratio


def two_sided_param_map(beta: float, lam: float, Omega, beta0: float) -> Tuple[float, float]:
    ratio = _j_over_d0(beta0, Omega)
    delta = beta - beta0
    factor = 1.0 + 2.0 * ratio * delta
    if abs(factor) < 1e-12:
        raise ValueError(f'beta={beta} is the pole of the two-sided map (beta0={beta0}).')
    return float(beta0 - delta / factor), float(lam * factor ** 2)


def kron_lr_closed_form(q: QMatrix) -> float:
    gap = q.qS - q.qT
    return 0.5 * (gap + np.sqrt(gap * gap + 4.0 * q.qST ** 2))


def _log_bessel_ratio(nu: float, x: float) -> float:
    # log( x^{-nu} I_nu(x) )
    if x < 1e-6:
        return -nu * np.log(2.0) - gammaln(nu + 1.0) + x * x / (4.0 * (nu + 1.0))
    return float(np.log(ive(nu, x)) + x - nu * np.log(x))


def log_q_density(q: QMatrix, beta: float, lam: float, k: int, Omega, beta0: float) -> float:
    if k < 2:
        raise ValueError('the Q density requires k >= 2')
    det = q.det()
    if det <= 0:
        return -np.inf
    c, d = cd_scalars(beta, beta0, Omega)
    xi = c * c * q.qS + 2.0 * c * d * q.qST + d * d * q.qT
    if xi < -1e-12 * max(1.0, q.qS + q.qT):
        raise NumericFailure(f'xi must be non-negative. Got {xi}.')
    xi = max(xi, 0.0)
    nu = (k - 2) / 2.0
    log_k0 = -((k + 2) / 2.0 * np.log(2.0) + 0.5 * np.log(np.pi) + gammaln((k - 1) / 2.0))
    x = np.sqrt(lam * xi)
    return float(log_k0 - lam * (c * c + d * d) / 2.0 + (k - 3) / 2.0 * np.log(det)
                 - (q.qS + q.qT) / 2.0 + _log_bessel_ratio(nu, x))


def q_density(q: QMatrix, beta: float, lam: float, k: int, Omega, beta0: float) -> float:
    return float(np.exp(log_q_density(q, beta, lam, k, Omega, beta0)))


def structural_to_reduced(delta: float, Psi) -> np.ndarray:
    A = np.array([[1.0, delta], [0.0, 1.0]])
    return A @ np.asarray(Psi, dtype=float) @ A.T


def structural_action(delta: float, lam: float, Psi, g2) -> Tuple[float, float, np.ndarray]:
    g2 = np.asarray(g2, dtype=float)
    g11, s, g22 = g2[0, 0], g2[1, 0], g2[1, 1]
    assert abs(g2[0, 1]) == 0.0, 'g2 must be lower triangular'
    den = delta * s + g22
    if abs(den) < 1e-12:
        raise ValueError(f'delta={delta} is excluded by g2 (zero denominator).')
    gamma = np.array([[g11 * g22 / den, 0.0], [s, den]])
    psi = StructuralCov(Psi).Psi
    return float(delta * g11 / den), float(den ** 2 * lam), symmetrize(gamma @ psi @ gamma.T)


# ================================
# 最近 Kronecker 近似与不变坐标
# ================================

def rearrange(Sigma0: np.ndarray, k: int) -> np.ndarray:
    return Sigma0.reshape(2, k, 2, k).transpose(0, 2, 1, 3).reshape(4, k * k)


def nearest_kronecker(Sigma0) -> Tuple[np.ndarray, np.ndarray, np.ndarray]:
    Sigma0 = np.asarray(Sigma0, dtype=float)
    k = Sigma0.shape[0] // 2
    if Sigma0.shape != (2 * k, 2 * k):
        raise ValueError(f'Sigma0 must be 2k x 2k. Got shape {Sigma0.shape}.')
    U, s, Vt = np.linalg.svd(rearrange(Sigma0, k), full_matrices=False)
    if s[0] <= 0:
        raise NumericFailure('dominant singular value is zero')
    Omega0 = (s[0] * U[:, 0]).reshape(2, 2)
    Phi = Vt[0].reshape(k, k)
    if np.trace(Phi) < 0:
        Omega0, Phi = -Omega0, -Phi
    Omega0 = symmetrize(Omega0)
    Phi = symmetrize(Phi)
    det = float(np.linalg.det(Phi))
    if det <= 0:
        raise NotPositiveDefiniteError('Kronecker factor Phi', float(np.linalg.eigvalsh(Phi)[0]),
                                       float(np.linalg.eigvalsh(Phi)[-1]))
    scale = det ** (1.0 / k)
    Phi = Phi / scale
    Omega0 = Omega0 * scale
    residual = Sigma0 - np.kron(Omega0, Phi)
    logging.debug(f'nearest Kronecker residual norm {np.linalg.norm(residual):.6g}')
    return Omega0, Phi, residual


class InvariantCoordinates:
    def __init__(self, rbar: Optional[np.ndarray], gamma_blocks: Optional[Dict[Tuple[int, int], np.ndarray]],
                 lambda11: Optional[np.ndarray], gram: Optional[np.ndarray] = None):
        self.rbar = rbar
        self.gamma_blocks = gamma_blocks
        self.lambda11 = lambda11
        self.gram = gram

    @property
    def degenerate(self) -> bool:
        return self.gram is not None


def _orient(vectors: np.ndarray) -> np.ndarray:
    out = vectors.copy()
    for i in range(out.shape[1]):
        nz = np.flatnonzero(np.abs(out[:, i]) > 1e-12)
        if nz.size and out[nz[0], i] < 0:
            out[:, i] = -out[:, i]
    return out


def invariant_coordinates(R0, Sigma0, kron: Optional[Tuple[np.ndarray, np.ndarray]] = None,
                          zero_tol: float = 1e-10, cond_limit: float = 1e10) -> InvariantCoordinates:
    R0 = np.asarray(R0, dtype=float)
    Sigma0 = np.asarray(Sigma0, dtype=float)
    k = R0.shape[0]
    if kron is None:
        Omega0, Phi, _ = nearest_kronecker(Sigma0)
    else:
        Omega0, Phi = (np.asarray(x, dtype=float) for x in kron)
    L_omega = lower_factor(Omega0, 'Omega0')
    L_phi = lower_factor(Phi, 'Phi')

    rbar = np.linalg.solve(L_phi, R0) @ np.linalg.inv(L_omega).T
    big = np.kron(np.linalg.inv(L_omega), np.linalg.inv(L_phi))
    gamma = symmetrize(big @ (Sigma0 - np.kron(Omega0, Phi)) @ big.T)

    if np.linalg.norm(gamma) <= zero_tol * max(1.0, np.linalg.norm(Sigma0)):
        return InvariantCoordinates(None, None, None, gram=rbar.T @ rbar)

    g11 = block(gamma, 0, 0, k)
    w, h = np.linalg.eigh(g11)
    order = np.argsort(w)[::-1]
    w = w[order]
    h = _orient(h[:, order])
    cond = np.max(np.abs(w)) / max(np.min(np.abs(w)), 1e-300)
    if cond > cond_limit:
        raise IllConditionedError(f'Gamma11 is not invertible: condition number {cond:.3g}', cond)

    blocks = {(i + 1, j + 1): h.T @ block(gamma, i, j, k) @ h for i in range(2) for j in range(2)}
    return InvariantCoordinates(h.T @ rbar, blocks, w)


def is_kronecker(Sigma0, tol: float = 1e-10) -> bool:
    _, _, residual = nearest_kronecker(Sigma0)
    return float(np.linalg.norm(residual)) <= tol * max(1.0, float(np.linalg.norm(Sigma0)))


# Kronecker 情形下通用 S/T 与简化 S/T 一致，检查用
def kron_blocks(Omega, Phi) -> NullBlocks:
    return NullBlocks(np.kron(np.asarray(Omega, dtype=float), np.asarray(Phi, dtype=float)))
