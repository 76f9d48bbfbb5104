from typing import Dict, Optional, Type

import numpy as np

from settings import StatParameters
from tools.utils_basic import normalize_stat_id
from model.model_core import NullBlocks, STPair
from statistic.statistic_basic import StatValue, ar_values, lm_values, lm1_values, qlr_values, clc_values, resolve_weight
from statistic.statistic_likelihood import lr_values, log_il_values


# ================================
# 统计量基类：给定 t 与 Sigma0，批量计算一组 S 的统计量
# ================================
class BaseStatistic:
    name = ''
    invariant = True        # 在 G2+ 群作用下不变（IL 为相对不变）
    log_scale = False       # 数值以对数刻度报告
    non_negative = True     # 取值恒非负，LM1 与 CLC 除外
    min_k = 1

    def __init__(self, parameters=StatParameters):
        self.parameters = parameters

    def values(self, S: np.ndarray, t: np.ndarray, blocks: NullBlocks) -> np.ndarray:
        raise NotImplementedError

    def value(self, st: STPair, blocks: NullBlocks) -> float:
        return float(self.values(st.S[None, :], st.T, blocks)[0])

    def evaluate(self, st: STPair, blocks: NullBlocks) -> StatValue:
        ans = StatValue(self.name, self.value(st, blocks))
        assert not self.non_negative or self.log_scale or ans.value >= 0.0, f'{ans} should be non-negative'
        return ans

    # 条件分布与 t 无关且为卡方时返回自由度
    def chi_square_df(self, k: int) -> Optional[int]:
        return None

    def check_k(self, k: int) -> None:
        if k < self.min_k:
            raise ValueError(f'statistic {self.name} requires k >= {self.min_k}. Got k={k}.')


class ARStatistic(BaseStatistic):
    name = 'ar'

    def values(self, S, t, blocks):
        return ar_values(np.atleast_2d(S))

    def chi_square_df(self, k):
        return k


class LMStatistic(BaseStatistic):
    name = 'lm'

    def values(self, S, t, blocks):
        return lm_values(np.atleast_2d(S), blocks.lm_direction(t))

    def chi_square_df(self, k):
        return 1


class LM1Statistic(BaseStatistic):
    name = 'lm1'
    non_negative = False

    def values(self, S, t, blocks):
        return lm1_values(np.atleast_2d(S), blocks.lm_direction(t))


class QLRStatistic(BaseStatistic):
    name = 'qlr'

    def values(self, S, t, blocks):
        S = np.atleast_2d(S)
        return qlr_values(ar_values(S), lm_values(S, blocks.lm_direction(t)), float(t @ t))


class CLCStatistic(BaseStatistic):
    name = 'clc'
    non_negative = False

    def values(self, S, t, blocks):
        S = np.atleast_2d(S)
        weight = resolve_weight(self.parameters.clc_weight, t)
        return clc_values(ar_values(S), lm_values(S, blocks.lm_direction(t)), weight)


class LRStatistic(BaseStatistic):
    name = 'lr'

    def values(self, S, t, blocks):
        return lr_values(S, t, blocks, self.parameters.search)[0]


class ILStatistic(BaseStatistic):
    name = 'il'
    log_scale = True
    min_k = 2

    def values(self, S, t, blocks):
        return log_il_values(S, t, blocks, self.parameters.quad, self.parameters.search)


STATISTICS: Dict[str, Type[BaseStatistic]] = {
    cls.name: cls for cls in [
        ARStatistic, LMStatistic, LM1Statistic, QLRStatistic, CLCStatistic, LRStatistic, ILStatistic,
    ]
}


def get_statistic(name: str, parameters=StatParameters) -> BaseStatistic:
    key = normalize_stat_id(name)
    if key not in STATISTICS:
        raise ValueError(f'unknown statistic {name!r}; expected one of {sorted(STATISTICS)}')
    return STATISTICS[key](parameters)
