import logging


# logging 模块的初始化配置，默认输出到 stderr
def logging_init(path=None, level=logging.WARNING, file_line=False):
    file_line_fmt = ""
    if file_line:
        file_line_fmt = "%(filename)s[line:%(lineno)d] - %(levelname)s: "
    logging.basicConfig(
        level=level,
        format=file_line_fmt + "%(asctime)s|%(message)s",
        filename=path,
        force=True,
    )


# 统计量名称统一成小写标识
def normalize_stat_id(name: str) -> str:
    return name.strip().lower()


# 浮点数组转成可 JSON 序列化的列表
def to_jsonable(value):
    if hasattr(value, 'tolist'):
        return value.tolist()
    if isinstance(value, (list, tuple)):
        return [to_jsonable(v) for v in value]
    if isinstance(value, dict):
        return {k: to_jsonable(v) for k, v in value.items()}
    return value
