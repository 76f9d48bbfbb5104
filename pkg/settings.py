# 全局默认参数，命令行与 JSON 配置会覆盖这些值

DEFAULT_SEED = 20240607


class LinalgParameters:
    eig_floor = 1e-12           # 最小特征值 / 最大特征值 低于此值视为非正定
    symmetry_tol = 1e-12        # 对称性检查容差（相对最大元素）
    cond_limit = 1e12           # st_to_r0 的条件数上限
    rank_tol = 1e-10            # 工具变量矩阵奇异值比例下限


class SearchParameters:
    grid_points = 512           # LR 角度网格点数
    golden_tol = 1e-12          # 黄金分割终止宽度
    draw_chunk = 1024           # 批量计算每块的样本数


class QuadParameters:
    nodes = 16                  # 每个面板的 Gauss-Legendre 节点数
    levels = 12                 # 峰值两侧几何加密的面板层数
    rel_tol = 1e-8              # 相邻两次加倍的相对变化
    max_refine = 8              # 最多加倍次数
    roundoff = 1e3              # 容差下限 = roundoff * eps * (1 + |x|^2)，x = [S; T]


class ConditionalParameters:
    mc_reps = 10000             # 条件临界值的模拟次数
    min_reps = 1000             # 允许的最少模拟次数
    alpha = 0.05
    chunk = 1000                # 每个子随机流的抽样数，与线程数无关
    frame_tie_tol = 1e-8        # 抽样坐标系中视为重特征值的相对差
    workers = 1


class HacParameters:
    kernel = 'bartlett'
    bandwidth = 'auto'          # floor(4 * (n / 100) ** (2 / 9))
    clip_factor = 1e-10         # 特征值修复下限 = clip_factor * trace / 2k


class DesignParameters:
    c11 = 1.0
    c12 = 100.0
    lam = 50.0
    delta_grid = [-4.0, -2.0, -1.0, -0.5, 0.0, 0.5, 1.0, 2.0, 4.0]


class GroupParameters:
    scale = 1.0
    diag_low = 0.5
    diag_high = 2.0
    offdiag = 1.0
    min_det_ratio = 0.1
    max_cond = 1e4
    resample_budget = 1000


class StatParameters:
    clc_weight = 0.5            # CLC 中 J 统计量的权重 m(T)，可以替换为函数
    search = SearchParameters
    quad = QuadParameters
