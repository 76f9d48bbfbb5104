"""
命令行入口：

    python run_ivtest.py test --data toy.csv --beta0 0 --stat ar
    python run_ivtest.py power --config power.json --out power.csv
    python run_ivtest.py size --config size.json
    python run_ivtest.py design lowpower --k 2 --c12 100 --lambda 50
    python run_ivtest.py check invariance --k 2 3
    python run_ivtest.py kron approx --sigma sigma0.csv

stdout 只输出机器可读结果，诊断信息写到 stderr 或 --log-file。
退出码：0 成功，1 用法或输入错误，2 数值失败。
"""
import sys
import logging
import argparse
from typing import List, Optional

import numpy as np
import pandas as pd

from settings import DEFAULT_SEED, ConditionalParameters, DesignParameters, HacParameters
from tools.utils_basic import logging_init, to_jsonable
from tools.utils_cache import dump_json, load_json, save_json, load_matrix, save_matrix, matrix_to_csv, \
    save_table, table_to_csv
from tools.utils_linalg import NumericFailure, NotPositiveDefiniteError, IllConditionedError
from model.designs import DesignSpec, low_power_sigma, design_report
from model.kronecker import nearest_kronecker, invariant_coordinates
from reader.reader_sample import load_sample_csv
from estimator.hac_estimation import feasible_problem
from tester.conditional import run_test
from tester.simulation import PowerStudyConfig, power_curve, size_study, feasible_size_study
from tester.invariance_check import invariance_report

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_NUMERIC = 2


class CliParser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f'{self.prog}: error: {message}\n')


def _bandwidth(value: str):
    if value == 'auto':
        return value
    try:
        return int(value)
    except ValueError:
        raise argparse.ArgumentTypeError(f"bandwidth must be an integer or 'auto'. Got {value!r}.")


def _emit(text: str) -> None:
    sys.stdout.write(text if text.endswith('\n') else text + '\n')


def _emit_table(df, path: Optional[str]) -> None:
    if path is None:
        _emit(table_to_csv(df))
    else:
        save_table(path, df)


# ================================
# 子命令
# ================================

def cmd_test(args) -> int:
    raw = load_sample_csv(args.data)
    override = load_matrix(args.sigma) if args.sigma else None
    problem, estimate = feasible_problem(raw, args.beta0, args.kernel, args.bandwidth, override)
    results = [
        run_test(problem, stat, args.alpha, args.mc_reps, args.seed, workers=args.workers, fast=args.fast)
        for stat in args.stat
    ]
    if args.csv:
        _emit(table_to_csv(pd.DataFrame([r.to_row() for r in results])))
        return EXIT_OK

    payloads = []
    for result in results:
        payload = result.to_dict()
        payload['beta0'] = args.beta0
        if estimate is not None:
            payload['hac'] = estimate.to_dict()
        payloads.append(payload)
    _emit(dump_json(payloads[0] if len(payloads) == 1 else payloads))
    return EXIT_OK


def _study_config(args):
    config = load_json(args.config)
    if args.seed is not None:
        config['seed'] = args.seed
    if args.workers is not None:
        config['workers'] = args.workers
    if args.fast:
        config['fast'] = True
    return PowerStudyConfig.from_dict(config)


def cmd_power(args) -> int:
    config = _study_config(args)
    if args.long:
        table, details = power_curve(config, keep_details=True)
        save_table(args.long, details)
    else:
        table = power_curve(config)
    _emit_table(table, args.out)
    return EXIT_OK


def cmd_size(args) -> int:
    config = _study_config(args)
    if config.dgp is not None and len(config.n_grid) > 0:
        table = feasible_size_study(config)
    elif args.long:
        table, details = size_study(config, keep_details=True)
        save_table(args.long, details)
    else:
        table = size_study(config)
    _emit_table(table, args.out)
    return EXIT_OK


def cmd_design_lowpower(args) -> int:
    spec = DesignSpec(args.k, args.c11, args.c12, args.c22, args.lam)
    sigma = low_power_sigma(spec)
    report = to_jsonable(design_report(spec, args.alpha))
    if args.report:
        save_json(args.report, report)
    if args.sigma_out:
        save_matrix(args.sigma_out, sigma)
        _emit(dump_json(report))
    else:
        _emit(matrix_to_csv(sigma))
    return EXIT_OK


def cmd_check_invariance(args) -> int:
    report = invariance_report(args.k, args.pairs, args.seed, decision_pairs=args.decision_pairs,
                               mc_reps=args.mc_reps, weight_check=not args.no_weight,
                               il_groups=0 if args.no_il else 3)
    _emit(dump_json(to_jsonable(report)))
    return EXIT_OK


def cmd_kron_approx(args) -> int:
    sigma = load_matrix(args.sigma)
    Omega0, Phi, residual = nearest_kronecker(sigma)
    payload = {
        'Omega0': Omega0,
        'Phi': Phi,
        'residual_norm': float(np.linalg.norm(residual)),
        'relative_residual': float(np.linalg.norm(residual) / np.linalg.norm(sigma)),
    }
    if args.r0:
        coords = invariant_coordinates(load_matrix(args.r0), sigma, (Omega0, Phi))
        payload['degenerate'] = coords.degenerate
        if coords.degenerate:
            payload['gram'] = coords.gram
        else:
            payload['rbar'] = coords.rbar
            payload['lambda11'] = coords.lambda11
            payload['gamma_blocks'] = {f'{i}{j}': m for (i, j), m in coords.gamma_blocks.items()}
    _emit(dump_json(to_jsonable(payload)))
    return EXIT_OK


# ================================
# 参数解析
# ================================

def _common(parser: argparse.ArgumentParser, seed_default=DEFAULT_SEED) -> None:
    parser.add_argument('--seed', type=int, default=seed_default, help='base random seed (default: %(default)s)')
    parser.add_argument('--workers', type=int, default=None, help='worker threads, never changes the output')
    parser.add_argument('--verbose', '-v', action='count', default=0, help='-v info, -vv debug')
    parser.add_argument('--log-file', default=None, help='write logs to this file instead of stderr')


def build_parser() -> CliParser:
    parser = CliParser(prog='run_ivtest', description='weak-instrument robust tests with HAC errors',
                       formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    sub = parser.add_subparsers(dest='command', required=True)

    p = sub.add_parser('test', help='conditional test on a dataset', formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--data', required=True, help='CSV with columns y1, y2, z1..zk[, w1..wp]')
    p.add_argument('--beta0', type=float, required=True)
    p.add_argument('--stat', nargs='+', default=['ar'], help='ar lm lm1 qlr clc lr il')
    p.add_argument('--alpha', type=float, default=ConditionalParameters.alpha)
    p.add_argument('--kernel', choices=['bartlett', 'parzen'], default=HacParameters.kernel)
    p.add_argument('--bandwidth', type=_bandwidth, default=HacParameters.bandwidth)
    p.add_argument('--sigma', default=None, help='headerless CSV of a known Sigma, skips HAC estimation')
    p.add_argument('--mc-reps', type=int, default=ConditionalParameters.mc_reps)
    p.add_argument('--fast', action='store_true', help='chi-square critical values for AR and LM')
    p.add_argument('--csv', action='store_true', help='emit one CSV row per statistic')
    _common(p)
    p.set_defaults(func=cmd_test)

    for name, func, text in [('power', cmd_power, 'power curve study'), ('size', cmd_size, 'size study')]:
        p = sub.add_parser(name, help=text, formatter_class=argparse.ArgumentDefaultsHelpFormatter)
        p.add_argument('--config', required=True, help='JSON study configuration')
        p.add_argument('--out', default=None, help='CSV output path (default: stdout)')
        p.add_argument('--long', default=None, help='also write per-replication records to this CSV')
        p.add_argument('--fast', action='store_true', help='chi-square critical values for AR and LM')
        _common(p, seed_default=None)
        p.set_defaults(func=func)

    design = sub.add_parser('design', help='covariance designs')
    design_sub = design.add_subparsers(dest='design', required=True)
    p = design_sub.add_parser('lowpower', help='design where LM power collapses',
                              formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--k', type=int, default=2)
    p.add_argument('--c11', type=float, default=DesignParameters.c11)
    p.add_argument('--c12', type=float, default=DesignParameters.c12)
    p.add_argument('--c22', type=float, default=None, help='default c12^2 / c11 + c12^-3')
    p.add_argument('--lambda', dest='lam', type=float, default=DesignParameters.lam)
    p.add_argument('--alpha', type=float, default=ConditionalParameters.alpha)
    p.add_argument('--sigma-out', default=None, help='write Sigma0 here and print the JSON report')
    p.add_argument('--report', default=None, help='write the JSON report to this path')
    _common(p)
    p.set_defaults(func=cmd_design_lowpower)

    check = sub.add_parser('check', help='property checks')
    check_sub = check.add_subparsers(dest='check', required=True)
    p = check_sub.add_parser('invariance', help='invariance suite report',
                             formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--k', type=int, nargs='+', default=[2, 3])
    p.add_argument('--pairs', type=int, default=100)
    p.add_argument('--decision-pairs', type=int, default=10)
    p.add_argument('--mc-reps', type=int, default=1000)
    p.add_argument('--no-weight', action='store_true', help='skip the weight measure quadrature')
    p.add_argument('--no-il', action='store_true', help='skip the IL ratio check')
    _common(p)
    p.set_defaults(func=cmd_check_invariance)

    kron = sub.add_parser('kron', help='Kronecker structure')
    kron_sub = kron.add_subparsers(dest='kron', required=True)
    p = kron_sub.add_parser('approx', help='nearest Kronecker approximation',
                            formatter_class=argparse.ArgumentDefaultsHelpFormatter)
    p.add_argument('--sigma', required=True, help='headerless CSV of Sigma0')
    p.add_argument('--r0', default=None, help='headerless k x 2 CSV of R0 for invariant coordinates')
    _common(p)
    p.set_defaults(func=cmd_kron_approx)
    return parser


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return EXIT_OK if e.code in (None, 0) else EXIT_USAGE

    level = [logging.WARNING, logging.INFO, logging.DEBUG][min(args.verbose, 2)]
    logging_init(args.log_file, level, file_line=args.verbose >= 2)

    try:
        return args.func(args)
    except (NumericFailure, NotPositiveDefiniteError, IllConditionedError) as e:
        logging.error(f'numeric failure: {e}')
        return EXIT_NUMERIC
    except (ValueError, KeyError, TypeError, OSError) as e:
        logging.error(f'input error: {e}')
        return EXIT_USAGE


if __name__ == '__main__':
    sys.exit(main())
