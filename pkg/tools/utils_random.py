import zlib

import numpy as np

# 随机流用途标签
TAG_CRITICAL = 1
TAG_DATA = 2
TAG_CHECK = 4


def tag_key(tag) -> int:
    if isinstance(tag, str):
        return zlib.crc32(tag.encode('utf-8'))
    return int(tag)


# 计数器型子随机流：同一组 (seed, keys) 永远得到同一条序列，与线程调度无关
def substream(seed: int, *keys) -> np.random.Generator:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(tag_key(k) for k in keys))
    return np.random.Generator(np.random.Philox(seq))


def derive_seed(seed: int, *keys) -> int:
    seq = np.random.SeedSequence(entropy=int(seed), spawn_key=tuple(tag_key(k) for k in keys))
    state = seq.generate_state(2, dtype=np.uint32)
    return int(state[0]) << 32 | int(state[1])
