# ================================
# 不变性检查：随机 (problem, g) 对逐项核对群作用，报告每项的最大偏差，passed 与容差比较
# ================================
import logging
from typing import Iterable, Optional

import numpy as np

from settings import DEFAULT_SEED, StatParameters
from model.model_core import NullProblem, ModelParams, st_from_null, log_density_r
from model.invariance import GroupElement, act_data, act_params, multiplier, sample_group, \
    induced_st_action, relative_invariance_of_weight
from statistic.statistic_components import get_statistic
from tester.conditional import run_test
from tools.utils_linalg import random_spd
from tools.utils_random import substream, derive_seed, TAG_CHECK


class InvarianceTolerance:
    statistic = 1e-8
    il_spread = 1e-6
    density = 1e-10
    group_law = 1e-10
    sign_action = 1e-10
    weight = 1e-4


def _relative(a: float, b: float) -> float:
    return abs(a - b) / max(abs(a), abs(b), 1e-12)


def _random_problem(k: int, rng: np.random.Generator) -> NullProblem:
    return NullProblem(rng.standard_normal((k, 2)), random_spd(2 * k, rng), 0.0)


def _act_max_diff(left: NullProblem, right: NullProblem) -> float:
    return max(float(np.max(np.abs(left.R0 - right.R0))),
               float(np.max(np.abs(left.Sigma0 - right.Sigma0)) / max(1.0, np.max(np.abs(left.Sigma0)))))


def check_statistics(pairs, names, stat_parameters=StatParameters) -> dict:
    worst = {name: 0.0 for name in names}
    for problem, g in pairs:
        moved = act_data(g, problem)
        st, st_g = st_from_null(problem), st_from_null(moved)
        for name in names:
            stat = get_statistic(name, stat_parameters)
            worst[name] = max(worst[name], _relative(stat.value(st, problem.blocks), stat.value(st_g, moved.blocks)))
    return worst


# 固定 g 与 Sigma0，不同 R0 下 log IL(g x) - log IL(x) 的极差
def check_il_ratio(k: int, rng: np.random.Generator, draws: int = 5, stat_parameters=StatParameters) -> float:
    stat = get_statistic('il', stat_parameters)
    Sigma0 = random_spd(2 * k, rng)
    g = sample_group(k, rng)
    diffs = []
    for _ in range(draws):
        problem = NullProblem(rng.standard_normal((k, 2)), Sigma0)
        moved = act_data(g, problem)
        diffs.append(stat.value(st_from_null(moved), moved.blocks) - stat.value(st_from_null(problem), problem.blocks))
    return float(np.max(diffs) - np.min(diffs))


def check_density(pairs, rng: np.random.Generator) -> float:
    worst = 0.0
    for problem, g in pairs:
        k = problem.k
        params = ModelParams(rng.uniform(-1.0, 1.0), rng.standard_normal(k), problem.Sigma0)
        moved = act_data(g, problem)
        left = log_density_r(problem.R0, params)
        right = log_density_r(moved.R0, act_params(g, params)) + np.log(multiplier(g, k).chi)
        worst = max(worst, abs(np.expm1(right - left)))
    return float(worst)


def check_group_laws(pairs, rng: np.random.Generator) -> float:
    worst = 0.0
    for problem, g in pairs:
        h = sample_group(problem.k, rng)
        composed = act_data(g.compose(h), problem)
        stepwise = act_data(g, act_data(h, problem))
        back = act_data(g.inverse(), act_data(g, problem))
        same = act_data(GroupElement.identity(problem.k), problem)
        worst = max(worst, _act_max_diff(composed, stepwise), _act_max_diff(back, problem),
                    _act_max_diff(same, problem))
    return float(worst)


# Kronecker Sigma0 下 g2 的作用只改变 S, T 的符号
def check_sign_action(k: int, rng: np.random.Generator, count: int = 20) -> float:
    worst = 0.0
    for _ in range(count):
        Omega = random_spd(2, rng)
        Phi = random_spd(k, rng)
        problem = NullProblem(rng.standard_normal((k, 2)), np.kron(Omega, Phi))
        g = sample_group(k, rng, allow_sign_flip=True)
        g = GroupElement(np.eye(k), g.g2)
        expected = induced_st_action(g.g2, st_from_null(problem))
        got = st_from_null(act_data(g, problem))
        worst = max(worst, float(np.max(np.abs(expected.S - got.S))), float(np.max(np.abs(expected.T - got.T))))
    return worst


def check_decisions(pairs, names, M: int, seed: int, alpha: float = 0.05) -> dict:
    agree = {name: 0 for name in names}
    for i, (problem, g) in enumerate(pairs):
        inner = derive_seed(seed, TAG_CHECK, 'decision', i)
        moved = act_data(g, problem)
        for name in names:
            a = run_test(problem, name, alpha, M, inner)
            b = run_test(moved, name, alpha, M, inner)
            agree[name] += int(a.reject == b.reject)
    return {name: agree[name] / max(1, len(pairs)) for name in names}


def invariance_report(ks: Iterable[int] = (2, 3), pairs: int = 100, seed: int = DEFAULT_SEED,
                      stats=('ar', 'lm', 'qlr', 'lr'), decision_stats=('ar', 'lm', 'qlr', 'lr', 'il'),
                      decision_pairs: int = 10, mc_reps: int = 1000, weight_check: bool = True,
                      il_groups: Optional[int] = 3, tolerance=InvarianceTolerance) -> dict:
    report = {'seed': seed, 'pairs': pairs, 'ks': list(ks), 'by_k': {}}
    passed = True
    for k in ks:
        rng = substream(seed, TAG_CHECK, k)
        sample = [(_random_problem(k, rng), sample_group(k, rng)) for _ in range(pairs)]
        entry = {
            'statistics': check_statistics(sample, stats),
            'density': check_density(sample, rng),
            'group_law': check_group_laws(sample, rng),
            'sign_action': check_sign_action(k, rng),
        }
        if il_groups:
            entry['il_ratio_spread'] = max(check_il_ratio(k, rng) for _ in range(il_groups))
            passed &= entry['il_ratio_spread'] <= tolerance.il_spread
        if decision_pairs:
            names = [name for name in decision_stats if k >= get_statistic(name).min_k]
            entry['decision_agreement'] = check_decisions(sample[:decision_pairs], names, mc_reps,
                                                          derive_seed(seed, TAG_CHECK, k))
            passed &= all(v == 1.0 for v in entry['decision_agreement'].values())
        passed &= all(v <= tolerance.statistic for v in entry['statistics'].values())
        passed &= entry['density'] <= tolerance.density
        passed &= entry['group_law'] <= tolerance.group_law
        passed &= entry['sign_action'] <= tolerance.sign_action
        report['by_k'][str(k)] = entry
        logging.info(f'invariance k={k}: {entry}')

    if weight_check:
        weight = relative_invariance_of_weight(2, seed)
        report['weight_max_rel_error'] = weight.max_rel_error
        passed &= weight.max_rel_error <= tolerance.weight
    report['passed'] = bool(passed)
    return report
