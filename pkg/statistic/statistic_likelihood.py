import logging
from typing import Callable, Tuple

import numpy as np
from numpy.polynomial.legendre import leggauss
from scipy.special import logsumexp

from settings import SearchParameters, QuadParameters
from model.model_core import NullBlocks
from tools.utils_linalg import NumericFailure

# ================================
# 角度形式：a = (sin t, cos t)'，x = [S; T]
# B(t) = [sin t * C ; cos t * K - sin t * K H]，q(t) = |P_B x|^2，|G(t)| = |B'B|
# 全部经 B(t) 的 QR 分解计算，不展开 B'B，Sigma0 病态时也不会相消
# ================================

INV_PHI = (np.sqrt(5.0) - 1.0) / 2.0
HALF_PI = np.pi / 2.0

# 单次批量 QR 的元素上限（样本数 x 角度数）
SOLVE_BUDGET = 1 << 18
# IL 单批节点数上限（样本数 x 节点数）
NODE_BUDGET = 1 << 20


class AngleForm:
    def __init__(self, blocks: NullBlocks):
        k = blocks.k
        self.k = k
        self.M1 = np.vstack([blocks.C, -blocks.KH])
        self.M2 = np.vstack([np.zeros((k, k)), blocks.K])

    def basis(self, theta: np.ndarray) -> np.ndarray:
        s = np.sin(theta)[..., None, None]
        c = np.cos(theta)[..., None, None]
        return s * self.M1 + c * self.M2

    def log_det(self, theta: np.ndarray) -> np.ndarray:
        R = np.linalg.qr(self.basis(theta), mode='r')
        return 2.0 * np.sum(np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1))), axis=-1)

    # 每个样本各自的角度，theta 形状 (m, n)，x 形状 (m, 2k)
    def q_at(self, theta: np.ndarray, x: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        m, n = theta.shape
        q = np.empty((m, n))
        log_det = np.empty((m, n))
        step = max(1, SOLVE_BUDGET // max(n, 1))
        for lo in range(0, m, step):
            hi = min(m, lo + step)
            Q, R = np.linalg.qr(self.basis(theta[lo:hi]))
            y = np.einsum('mnij,mi->mnj', Q, x[lo:hi])
            q[lo:hi] = np.einsum('mnj,mnj->mn', y, y)
            log_det[lo:hi] = 2.0 * np.sum(np.log(np.abs(np.diagonal(R, axis1=-2, axis2=-1))), axis=-1)
        return q, log_det

    # 所有样本共用一组角度
    def q_grid(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        Q, _ = np.linalg.qr(self.basis(theta))
        y = np.einsum('nij,mi->mnj', Q, x)
        return np.einsum('mnj,mnj->mn', y, y)

    def q_single(self, theta: np.ndarray, x: np.ndarray) -> np.ndarray:
        return self.q_at(theta[:, None], x)[0][:, 0]


def angle_grid(points: int) -> np.ndarray:
    return -HALF_PI + np.pi * np.arange(1, points + 1) / points


# 折回 (-pi/2, pi/2]
def _wrap(theta: np.ndarray) -> np.ndarray:
    out = theta - np.pi * np.floor((theta + HALF_PI) / np.pi)
    return np.where(out <= -HALF_PI, out + np.pi, out)


# 逐行黄金分割求最大值，func 把形状 (m,) 的角度映射成 (m,) 的函数值
def _golden_max(func: Callable, lo, hi, tol: float) -> Tuple[np.ndarray, np.ndarray]:
    a = np.array(lo, dtype=float)
    b = np.array(hi, dtype=float)
    iterations = 0
    while np.max(b - a) > tol:
        c = b - INV_PHI * (b - a)
        d = a + INV_PHI * (b - a)
        fc = func(c)
        fd = func(d)
        keep_left = fc > fd
        b = np.where(keep_left, d, b)
        a = np.where(keep_left, a, c)
        iterations += 1
        if iterations > 200 or not (np.all(np.isfinite(fc)) and np.all(np.isfinite(fd))):
            raise NumericFailure('golden-section search failed',
                                 trace=[('iterations', iterations), ('max_width', float(np.max(b - a)))])
    theta = 0.5 * (a + b)
    return theta, func(theta)


# 峰值两侧函数值下降 drop 的最小距离，在对数尺度上二分；下降不到时取 pi/8
def _peak_width(func: Callable, center: np.ndarray, drop: float, iterations: int = 60) -> np.ndarray:
    base = func(center)

    def fallen(d):
        return base - np.minimum(func(center - d), func(center + d)) >= drop

    lo = np.full(center.shape, 1e-13)
    hi = np.full(center.shape, HALF_PI)
    reached = fallen(hi)
    for _ in range(iterations):
        mid = np.sqrt(lo * hi)
        hit = fallen(mid)
        hi = np.where(hit, mid, hi)
        lo = np.where(hit, lo, mid)
    return np.where(reached, hi, np.pi / 8.0)


# |G(t)| 的谷：cos t K - sin t K H 在 cot t = eig(H) 处奇异，|G|^{-1/2} 与 q 在谷内变化极快
# 返回 (谷底角度, 谷宽)，只保留 |G|^{-1/2} 确实升高一倍以上的谷
def singular_angles(form: AngleForm, blocks: NullBlocks,
                    parameters=SearchParameters) -> Tuple[np.ndarray, np.ndarray]:
    spacing = np.pi / parameters.grid_points
    roots = np.real(np.linalg.eigvals(blocks.H))
    candidates = np.unique(np.round(_wrap(np.arctan2(1.0, roots)), 14))

    def neg_half_log_det(theta):
        return -0.5 * form.log_det(theta)

    theta, _ = _golden_max(neg_half_log_det, candidates - spacing, candidates + spacing, parameters.golden_tol)
    width = _peak_width(neg_half_log_det, theta, np.log(2.0))
    keep = width < np.pi / 8.0
    return _wrap(theta[keep]), width[keep]


# 以 center 为中心向两侧几何加密到 pi/2 的分点
def _graded(center: np.ndarray, width: np.ndarray, levels: int) -> np.ndarray:
    s_min = np.clip(width / 8.0, 1e-12, np.pi / 16.0)
    ratio = HALF_PI / s_min
    j = np.arange(levels + 1) / levels
    offsets = s_min[:, None] * ratio[:, None] ** j[None, :]
    offsets[:, -1] = HALF_PI
    return np.concatenate([center[:, None] - offsets, center[:, None], center[:, None] + offsets], axis=1)


# LR 的角度网格：均匀网格并上各个谷附近的几何网格
def _search_grid(points: int, poles: np.ndarray, pole_widths: np.ndarray) -> np.ndarray:
    parts = [angle_grid(points)]
    for pole, pole_width in zip(poles, pole_widths):
        offsets = pole_width * 2.0 ** np.arange(-6, 40)
        offsets = offsets[offsets < np.pi / points]
        parts.append(np.concatenate([pole - offsets, [pole], pole + offsets]))
    return np.unique(_wrap(np.concatenate(parts)))


def _broadcast_t(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    S = np.atleast_2d(S)
    return np.broadcast_to(np.asarray(T, dtype=float), S.shape)


def _stack(S: np.ndarray, T: np.ndarray) -> np.ndarray:
    return np.hstack([S, T])


# 批量 LR：返回 (LR, 最大化角度)
def lr_values(S: np.ndarray, T: np.ndarray, blocks: NullBlocks,
              parameters=SearchParameters) -> Tuple[np.ndarray, np.ndarray]:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    T = _broadcast_t(S, T)
    form = AngleForm(blocks)
    poles, pole_widths = singular_angles(form, blocks, parameters)
    grid = _search_grid(parameters.grid_points, poles, pole_widths)
    # 网格循环相邻点作为黄金分割区间
    left = np.concatenate([[grid[-1] - np.pi], grid[:-1]])
    right = np.concatenate([grid[1:], [grid[0] + np.pi]])
    r_t = np.einsum('mi,mi->m', T, T)

    values = np.empty(S.shape[0])
    thetas = np.empty(S.shape[0])
    for lo in range(0, S.shape[0], parameters.draw_chunk):
        hi = min(S.shape[0], lo + parameters.draw_chunk)
        x = _stack(S[lo:hi], T[lo:hi])
        q = form.q_grid(grid, x)
        best = np.argmax(q, axis=1)
        grid_max = q[np.arange(hi - lo), best]
        theta, refined = _golden_max(lambda th: form.q_single(th, x), left[best], right[best],
                                     parameters.golden_tol)
        use_grid = grid_max > refined
        theta = np.where(use_grid, grid[best], theta)
        q_max = np.maximum(grid_max, refined)
        values[lo:hi] = np.maximum(q_max - r_t[lo:hi], 0.0)
        thetas[lo:hi] = _wrap(theta)
    return values, thetas


# 每行的分点：LR 峰值附近与每个谷附近各自几何加密，再加上 t = 0（|sin t|^{k-2} 的尖点）
def _panels(theta_star: np.ndarray, width: np.ndarray, poles: np.ndarray, pole_widths: np.ndarray,
            levels: int) -> np.ndarray:
    m = theta_star.shape[0]
    start = (theta_star - HALF_PI)[:, None]
    parts = [_graded(theta_star, width, levels), start + np.mod(-start, np.pi)]
    for pole, pole_width in zip(poles, pole_widths):
        near_pole = _graded(np.full(m, pole), np.full(m, pole_width), levels)
        parts.append(start + np.mod(near_pole - start, np.pi))
    return np.sort(np.concatenate(parts, axis=1), axis=1)


def _panel_sum(form: AngleForm, x, r_t, breaks, nodes, weights, split: int) -> np.ndarray:
    m = breaks.shape[0]
    k = form.k
    a = breaks[:, :-1]
    width = (breaks[:, 1:] - a) / split
    sub = a[:, :, None] + width[:, :, None] * np.arange(split)[None, None, :]
    half = 0.5 * width[:, :, None, None]
    theta = (sub[..., None] + half * (nodes + 1.0)).reshape(m, -1)
    w = np.broadcast_to(half * weights, sub.shape + (nodes.shape[0],)).reshape(m, -1)

    q, log_det = form.q_at(theta, x)
    with np.errstate(divide='ignore', invalid='ignore'):
        log_w = np.log(w)
        log_f = -0.5 * log_det + 0.5 * (q - r_t[:, None])
        if k > 2:
            log_f = log_f + (k - 2) * np.log(np.abs(np.sin(theta)))
        terms = np.where(w > 0, log_w + log_f, -np.inf)
    return logsumexp(terms, axis=1)


# 按节点预算分批，避免节点数组随加倍次数爆炸
def _log_il_panels(form: AngleForm, x, r_t, breaks, nodes, weights, split: int) -> np.ndarray:
    m = breaks.shape[0]
    per_row = (breaks.shape[1] - 1) * split * nodes.shape[0]
    step = max(1, NODE_BUDGET // per_row)
    out = np.empty(m)
    for lo in range(0, m, step):
        hi = min(m, lo + step)
        out[lo:hi] = _panel_sum(form, x[lo:hi], r_t[lo:hi], breaks[lo:hi], nodes, weights, split)
    return out


# 逐行加倍细分，已收敛的行不再参与
def _refine(form: AngleForm, x, r_t, breaks, tol, parameters) -> np.ndarray:
    nodes, weights = leggauss(parameters.nodes)
    est = _log_il_panels(form, x, r_t, breaks, nodes, weights, 1)
    active = np.arange(x.shape[0])
    trace = []
    for refine in range(1, parameters.max_refine + 1):
        split = 2 ** refine
        new = _log_il_panels(form, x[active], r_t[active], breaks[active], nodes, weights, split)
        change = np.abs(np.expm1(new - est[active]))
        est[active] = new
        trace.append((split, int(active.size), float(np.max(change))))
        logging.debug(f'IL quadrature split={split} rows={active.size} max relative change={np.max(change):.3g}')
        active = active[change >= tol[active]]
        if active.size == 0:
            return est
    raise NumericFailure('IL quadrature did not converge', trace=trace)


# 批量 log IL，被积函数为 |G|^{-1/2} |sin t|^{k-2} exp((q(t) - T'T) / 2)
def log_il_values(S: np.ndarray, T: np.ndarray, blocks: NullBlocks,
                  parameters=QuadParameters, search=SearchParameters) -> np.ndarray:
    S = np.atleast_2d(np.asarray(S, dtype=float))
    k = S.shape[1]
    if k < 2:
        raise ValueError('IL requires k >= 2; use AR when k = 1.')
    T = _broadcast_t(S, T)
    form = AngleForm(blocks)
    r_t = np.einsum('mi,mi->m', T, T)
    _, theta_star = lr_values(S, T, blocks, search)
    poles, pole_widths = singular_angles(form, blocks, search)

    out = np.empty(S.shape[0])
    for lo in range(0, S.shape[0], search.draw_chunk):
        hi = min(S.shape[0], lo + search.draw_chunk)
        x = _stack(S[lo:hi], T[lo:hi])
        # 相对容差不低于 q 的舍入误差
        tol = np.maximum(parameters.rel_tol,
                         parameters.roundoff * np.finfo(float).eps * (1.0 + np.einsum('mi,mi->m', x, x)))
        width = _peak_width(lambda th: 0.5 * form.q_single(th, x), theta_star[lo:hi], 1.0)
        breaks = _panels(theta_star[lo:hi], width, poles, pole_widths, parameters.levels)
        out[lo:hi] = _refine(form, x, r_t[lo:hi], breaks, tol, parameters)
    return out


def _single(R0, Sigma0, T) -> Tuple[NullBlocks, np.ndarray, np.ndarray]:
    blocks = Sigma0 if isinstance(Sigma0, NullBlocks) else NullBlocks(np.asarray(Sigma0, dtype=float))
    S, _ = blocks.to_st(np.asarray(R0, dtype=float))
    return blocks, S[None, :], np.asarray(T, dtype=float)


def lr(R0, Sigma0, T) -> float:
    blocks, S, T = _single(R0, Sigma0, T)
    return float(lr_values(S, T, blocks)[0][0])


# 最大化方向，返回 (角度, Delta)；角度为 pi/2 时 Delta 为无穷
def lr_direction(R0, Sigma0, T) -> Tuple[float, float]:
    blocks, S, T = _single(R0, Sigma0, T)
    theta = float(lr_values(S, T, blocks)[1][0])
    delta = np.inf if abs(abs(theta) - HALF_PI) < 1e-15 else float(np.tan(theta))
    return theta, delta


def log_il(R0, Sigma0, T) -> float:
    blocks, S, T = _single(R0, Sigma0, T)
    return float(log_il_values(S, T, blocks)[0])


def il(R0, Sigma0, T) -> float:
    return float(np.exp(log_il(R0, Sigma0, T)))
