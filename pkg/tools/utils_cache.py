import json

import numpy as np
import pandas as pd


def load_json(path: str) -> dict:
    with open(path, 'r', encoding='utf-8') as r:
        ans = r.read()
    return json.loads(ans)


def save_json(path: str, var: dict) -> None:
    with open(path, 'w', encoding='utf-8') as w:
        w.write(json.dumps(var, indent=4))


def dump_json(var: dict) -> str:
    return json.dumps(var, indent=4, sort_keys=False)


# 矩阵：无表头、按行存储的 CSV
def load_matrix(path: str) -> np.ndarray:
    df = pd.read_csv(path, header=None, dtype=float)
    return df.to_numpy()


def save_matrix(path: str, matrix: np.ndarray) -> None:
    pd.DataFrame(np.atleast_2d(matrix)).to_csv(path, header=False, index=False, float_format='%.17g')


def matrix_to_csv(matrix: np.ndarray) -> str:
    return pd.DataFrame(np.atleast_2d(matrix)).to_csv(header=False, index=False, float_format='%.17g')


# 数据集：带表头的 CSV
def save_table(path: str, df: pd.DataFrame) -> None:
    df.to_csv(path, index=False, encoding='utf-8', float_format='%.10g')


def table_to_csv(df: pd.DataFrame) -> str:
    return df.to_csv(index=False, float_format='%.10g')
