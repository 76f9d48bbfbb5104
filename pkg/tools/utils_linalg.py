from typing import Optional

import numpy as np

from settings import LinalgParameters


class NotPositiveDefiniteError(ValueError):
    def __init__(self, name: str, min_eig: float, max_eig: float):
        self.min_eig = min_eig
        self.max_eig = max_eig
        super().__init__(
            f'{name} is not positive definite: min eigenvalue {min_eig:.6g}, '
            f'max eigenvalue {max_eig:.6g}')


class IllConditionedError(ValueError):
    def __init__(self, message: str, cond: float = np.inf):
        self.cond = cond
        super().__init__(message)


class NumericFailure(RuntimeError):
    def __init__(self, message: str, trace: Optional[list] = None):
        self.trace = trace or []
        super().__init__(message)


# vec 按列堆叠：(A'⊗I_k) vec(R) = vec(R A)
def vec(matrix: np.ndarray) -> np.ndarray:
    return np.asarray(matrix, dtype=float).reshape(-1, order='F')


def unvec(vector: np.ndarray, k: int) -> np.ndarray:
    return np.asarray(vector, dtype=float).reshape((k, -1), order='F')


def symmetrize(matrix: np.ndarray) -> np.ndarray:
    return 0.5 * (matrix + matrix.T)


def check_symmetric(matrix: np.ndarray, name: str = 'matrix', parameters=LinalgParameters) -> None:
    matrix = np.asarray(matrix, dtype=float)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1]:
        raise ValueError(f'{name} must be a square matrix. Got shape {matrix.shape}.')
    if not np.all(np.isfinite(matrix)):
        raise ValueError(f'{name} has non-finite entries.')
    scale = max(1.0, float(np.max(np.abs(matrix))))
    gap = float(np.max(np.abs(matrix - matrix.T)))
    if gap > parameters.symmetry_tol * scale:
        raise NotPositiveDefiniteError(f'{name} (asymmetric by {gap:.3g})', np.nan, np.nan)


def check_spd(matrix: np.ndarray, name: str = 'matrix', parameters=LinalgParameters) -> np.ndarray:
    check_symmetric(matrix, name, parameters)
    eig = np.linalg.eigvalsh(symmetrize(np.asarray(matrix, dtype=float)))
    if eig[0] <= 0 or eig[0] < parameters.eig_floor * eig[-1]:
        raise NotPositiveDefiniteError(name, float(eig[0]), float(eig[-1]))
    return eig


# 对称正定矩阵的实数次幂，特征分解得到唯一的对称根
def sym_power(matrix: np.ndarray, power: float, name: str = 'matrix', parameters=LinalgParameters) -> np.ndarray:
    w, v = np.linalg.eigh(symmetrize(np.asarray(matrix, dtype=float)))
    if w[0] <= 0 or w[0] < parameters.eig_floor * w[-1]:
        raise NotPositiveDefiniteError(name, float(w[0]), float(w[-1]))
    return symmetrize((v * w ** power) @ v.T)


def sym_sqrt(matrix: np.ndarray, name: str = 'matrix', parameters=LinalgParameters) -> np.ndarray:
    return sym_power(matrix, 0.5, name, parameters)


def sym_inv_sqrt(matrix: np.ndarray, name: str = 'matrix', parameters=LinalgParameters) -> np.ndarray:
    return sym_power(matrix, -0.5, name, parameters)


# 只要求正定、不做条件数下限检查的对称根，用于抽样因子
def spd_sqrt(matrix: np.ndarray, name: str = 'matrix') -> np.ndarray:
    w, v = np.linalg.eigh(symmetrize(np.asarray(matrix, dtype=float)))
    if w[0] <= 0:
        raise NotPositiveDefiniteError(name, float(w[0]), float(w[-1]))
    return symmetrize((v * np.sqrt(w)) @ v.T)


# 下三角、正对角的平方根因子 L, A = L L'
def lower_factor(matrix: np.ndarray, name: str = 'matrix') -> np.ndarray:
    try:
        return np.linalg.cholesky(symmetrize(np.asarray(matrix, dtype=float)))
    except np.linalg.LinAlgError:
        eig = np.linalg.eigvalsh(symmetrize(matrix))
        raise NotPositiveDefiniteError(name, float(eig[0]), float(eig[-1]))


# 2k×2k 矩阵的 k×k 分块，i, j ∈ {0, 1}
def block(matrix: np.ndarray, i: int, j: int, k: int) -> np.ndarray:
    return matrix[i * k:(i + 1) * k, j * k:(j + 1) * k]


def random_spd(dim: int, rng: np.random.Generator, spread: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return symmetrize(a @ a.T + spread * np.eye(dim))
