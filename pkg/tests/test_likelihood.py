import numpy as np
import pytest
from numpy.testing import assert_allclose
from scipy import integrate, optimize

from model.model_core import NullBlocks, NullProblem, ModelParams, STPair, build_null_problem, st_from_null, draw_r0
from model.kronecker import q_matrix, kron_lr_closed_form
from model.designs import DesignSpec, low_power_sigma
from statistic.statistic_likelihood import lr_values, log_il_values, lr, lr_direction, log_il, il, angle_grid, \
    singular_angles, AngleForm
from tester.conditional import run_test_st
from tools.utils_linalg import NumericFailure
from settings import QuadParameters


# 直接在 vec(R0) 坐标下用 Sigma0^{-1} 计算 q(t) 与 |G(t)|
def _direct(R0, Sigma0, theta):
    k = R0.shape[0]
    x = R0.reshape(-1, order='F')
    P = np.linalg.inv(Sigma0)
    A = np.kron(np.array([[np.sin(theta)], [np.cos(theta)]]), np.eye(k))
    G = A.T @ P @ A
    w = A.T @ P @ x
    return float(w @ np.linalg.solve(G, w)), float(np.linalg.det(G))


def _il_oracle(problem):
    k = problem.k
    T = st_from_null(problem).T

    def f(theta):
        q, det = _direct(problem.R0, problem.Sigma0, theta)
        return det ** -0.5 * abs(np.sin(theta)) ** (k - 2) * np.exp(0.5 * (q - T @ T))
    value, _ = integrate.quad(f, -np.pi / 2, np.pi / 2, limit=400, epsabs=0.0, epsrel=1e-10, points=[0.0])
    return value


def test_il_equals_pi_at_origin():
    blocks = NullBlocks(np.eye(4))
    value = log_il_values(np.zeros((1, 2)), np.zeros(2), blocks)[0]
    assert value == pytest.approx(np.log(np.pi), abs=1e-8)


@pytest.mark.parametrize('k', [2, 3])
def test_il_matches_adaptive_quadrature(k, make_problem):
    for _ in range(3):
        problem = make_problem(k)
        expected = _il_oracle(problem)
        got = log_il(problem.R0, problem.Sigma0, st_from_null(problem).T)
        assert got == pytest.approx(np.log(expected), abs=1e-6)


@pytest.mark.parametrize('k', [1, 2, 3])
def test_lr_matches_dense_grid(k, make_problem):
    theta = np.linspace(-np.pi / 2, np.pi / 2, 20001)
    for _ in range(3):
        problem = make_problem(k)
        T = st_from_null(problem).T
        q = [_direct(problem.R0, problem.Sigma0, t)[0] for t in theta]
        expected = max(q) - T @ T
        assert lr(problem.R0, problem.Sigma0, T) == pytest.approx(expected, rel=1e-6, abs=1e-6)


def test_lr_bounds(make_problem):
    for _ in range(10):
        problem = make_problem(3)
        st = st_from_null(problem)
        value = lr(problem.R0, problem.Sigma0, st.T)
        assert -1e-12 <= value <= st.S @ st.S + 1e-9


def test_lr_kronecker_closed_form(rng, kron_factors):
    for beta0 in [0.0, 0.4, -1.5]:
        Omega, Phi = kron_factors(3)
        R = rng.standard_normal((3, 2))
        problem = build_null_problem(R, np.kron(Omega, Phi), beta0)
        st = st_from_null(problem)
        value = lr_values(st.S, st.T, problem.blocks)[0][0]
        assert value == pytest.approx(kron_lr_closed_form(q_matrix(st)), rel=1e-8, abs=1e-10)


def test_lr_direction_identity_sigma():
    T = np.array([1.0, -0.5])
    R0 = np.column_stack([2.0 * T, T])
    theta, delta = lr_direction(R0, np.eye(4), T)
    assert delta == pytest.approx(2.0, rel=1e-6)
    assert np.tan(theta) == pytest.approx(delta)
    assert lr(R0, np.eye(4), T) == pytest.approx(4.0 * T @ T, rel=1e-10)


def test_lr_direction_at_infinity():
    T = np.zeros(2)
    R0 = np.column_stack([np.array([1.0, 1.0]), T])
    theta, delta = lr_direction(R0, np.eye(4), T)
    assert abs(theta) == pytest.approx(np.pi / 2, abs=1e-9)
    assert abs(delta) > 1e8


def test_angle_grid_half_open():
    grid = angle_grid(8)
    assert grid[-1] == pytest.approx(np.pi / 2)
    assert grid[0] > -np.pi / 2


def test_il_requires_k2():
    with pytest.raises(ValueError):
        log_il_values(np.zeros((1, 1)), np.zeros(1), NullBlocks(np.eye(2)))


def test_il_reports_non_convergence(make_problem):
    class Strict(QuadParameters):
        rel_tol = 0.0
        max_refine = 1
        roundoff = 0.0

    problem = make_problem(2)
    st = st_from_null(problem)
    with pytest.raises(NumericFailure) as err:
        log_il_values(st.S[None, :], st.T, problem.blocks, Strict)
    assert len(err.value.trace) == 1


def test_il_level_and_log_agree():
    problem = NullProblem(np.array([[0.3, -0.2], [0.1, 0.5]]), np.eye(4))
    T = st_from_null(problem).T
    assert il(problem.R0, problem.Sigma0, T) == pytest.approx(np.exp(log_il(problem.R0, problem.Sigma0, T)))


# ================================
# 低功效设计：Sigma0 = [[c11 I, c12 J], [c12 J, c22 I]]，J 为反对角阵
# 在 H 的特征基下逐坐标分解：b_j(t) = (c1 sin t, kappa (cos t - d_j sin t))
# |G|^{-1/2} 在 cot t = d_j 处形成宽约 1e-7 的尖峰
# ================================

def _design_draws(k, count, delta=0.0, seed=11):
    spec = DesignSpec(k, c12=100.0, lam=50.0)
    Sigma0 = low_power_sigma(spec)
    blocks = NullBlocks(Sigma0)
    rng = np.random.default_rng(seed)
    params = ModelParams(delta, spec.mu, Sigma0)
    pairs = [blocks.to_st(draw_r0(params, rng)) for _ in range(count)]
    S = np.array([p[0] for p in pairs])
    T = np.array([p[1] for p in pairs])
    return blocks, S, T


class _DesignIntegrand:
    def __init__(self, blocks, S, T):
        d, U = np.linalg.eigh(blocks.H)
        self.d = d
        self.c1 = blocks.C[0, 0]
        self.kappa = blocks.K[0, 0]
        self.k = S.shape[0]
        self.s = U.T @ S
        self.t = U.T @ T
        self.ss = S @ S
        self.poles = np.arctan(1.0 / d)

    # 残差 |x_j|^2 - (b_j . x_j)^2 / |b_j|^2 = (b_j^perp . x_j)^2 / |b_j|^2，不做大数相减
    def _parts(self, theta):
        theta = np.atleast_1d(theta)[:, None]
        b1 = self.c1 * np.sin(theta)
        b2 = self.kappa * (np.cos(theta) - self.d * np.sin(theta))
        norm2 = b1 ** 2 + b2 ** 2
        residual = np.sum((b1 * self.t - b2 * self.s) ** 2 / norm2, axis=1)
        return residual, np.sum(np.log(norm2), axis=1)

    # 0.5 * (q - T'T)
    def half_lr(self, theta):
        residual, _ = self._parts(theta)
        return 0.5 * (self.ss - residual)

    def log_f(self, theta):
        residual, log_norm = self._parts(theta)
        with np.errstate(divide='ignore'):
            log_sin = (self.k - 2) * np.log(np.abs(np.sin(np.atleast_1d(theta))))
        return -0.5 * log_norm + log_sin + 0.5 * (self.ss - residual)

    def grid(self, points=20001):
        offsets = 1e-9 * 2.0 ** np.arange(0, 30)
        local = [p + sign * offsets for p in self.poles for sign in (-1.0, 1.0)]
        theta = np.concatenate([np.linspace(-np.pi / 2, np.pi / 2, points), self.poles] + local)
        return np.unique(theta[np.abs(theta) <= np.pi / 2])

    def lr(self):
        theta = self.grid()
        values = self.half_lr(theta)
        best = int(np.argmax(values))
        lo = theta[max(best - 1, 0)]
        hi = theta[min(best + 1, theta.shape[0] - 1)]
        res = optimize.minimize_scalar(lambda th: -self.half_lr(th)[0], bounds=(lo, hi), method='bounded',
                                       options={'xatol': 1e-14})
        return 2.0 * max(values[best], -res.fun), theta[best] if values[best] >= -res.fun else res.x

    def log_il(self):
        _, peak = self.lr()
        offsets = 1e-9 * 2.0 ** np.arange(0, 30)
        centers = np.concatenate([self.poles, [peak]])
        breaks = np.concatenate([[-np.pi / 2, 0.0, np.pi / 2], centers]
                                + [c + sign * offsets for c in centers for sign in (-1.0, 1.0)])
        breaks = np.unique(breaks[np.abs(breaks) <= np.pi / 2])
        shift = float(np.max(self.log_f(np.concatenate([self.grid(), [peak]]))))
        total = 0.0
        for a, b in zip(breaks[:-1], breaks[1:]):
            value, _ = integrate.quad(lambda th: np.exp(self.log_f(th)[0] - shift), a, b,
                                      epsabs=0.0, epsrel=1e-11, limit=200)
            total += value
        return shift + np.log(total)


def test_singular_angles_of_design():
    blocks, _, _ = _design_draws(2, 1)
    poles, widths = singular_angles(AngleForm(blocks), blocks)
    # cot t = H 的特征值 = +-c12 / c11
    h = blocks.H[0, 1]
    assert poles.shape == (2,)
    assert_allclose(np.sort(np.tan(poles)), [-1.0 / h, 1.0 / h], rtol=1e-6)
    assert np.all(widths < 1e-5)


def test_no_singular_angles_for_identity():
    blocks = NullBlocks(np.eye(4))
    poles, widths = singular_angles(AngleForm(blocks), blocks)
    assert poles.shape == (0,)
    assert widths.shape == (0,)


@pytest.mark.parametrize('k', [2, 3])
def test_il_on_low_power_design(k):
    blocks, S, T = _design_draws(k, 10)
    got = log_il_values(S, T, blocks)
    assert np.all(np.isfinite(got))
    expected = [_DesignIntegrand(blocks, s, t).log_il() for s, t in zip(S, T)]
    assert_allclose(got, expected, atol=1e-4)


@pytest.mark.parametrize('k', [2, 3])
def test_lr_on_low_power_design(k):
    blocks, S, T = _design_draws(k, 10)
    values = lr_values(S, T, blocks)[0]
    expected = [_DesignIntegrand(blocks, s, t).lr()[0] for s, t in zip(S, T)]
    assert_allclose(values, expected, rtol=1e-6, atol=1e-5)


@pytest.mark.parametrize('delta', [0.0, 1.0])
def test_il_null_batch_on_low_power_design(delta):
    blocks, _, T = _design_draws(2, 1, delta)
    S = np.random.default_rng(5).standard_normal((1000, 2))
    got = log_il_values(S, T[0], blocks)
    assert got.shape == (1000,)
    assert np.all(np.isfinite(got))


@pytest.mark.slow
def test_conditional_il_on_low_power_design():
    blocks, S, T = _design_draws(2, 1, delta=1.0)
    result = run_test_st(STPair(S[0], T[0]), blocks, 'il', 0.05, 1000, 3)
    assert np.isfinite(result.value)
    assert np.isfinite(result.critical_value)
    assert 0.0 < result.p_value <= 1.0
