"""
随机数流派生

一个主种子通过 SeedSequence 的 spawn_key 派生出所有模块的随机数流，
每个工作单元按 (种子, 键...) 独立取流，结果与调度顺序无关。
"""

import zlib
from typing import Union

import numpy as np

SeedKey = Union[int, str]


def _key_to_int(key: SeedKey) -> int:
    if isinstance(key, bool):
        return int(key)
    if isinstance(key, (int, np.integer)):
        if key < 0:
            raise ValueError(f"种子键必须是非负整数: {key}")
        return int(key)
    if isinstance(key, str):
        return zlib.crc32(key.encode("utf-8"))
    raise TypeError(f"不支持的种子键类型: {type(key).__name__}")


def derive_seed_sequence(seed: int, *keys: SeedKey) -> np.random.SeedSequence:
    """根据主种子和键路径构造 SeedSequence"""
    if seed < 0:
        raise ValueError(f"种子必须是非负整数: {seed}")
    return np.random.SeedSequence(seed, spawn_key=tuple(_key_to_int(k) for k in keys))


def derive_rng(seed: int, *keys: SeedKey) -> np.random.Generator:
    """
    派生独立的随机数生成器

    Args:
        seed: 主种子
        *keys: 键路径，例如 ("cycle", 2, "falsify")

    Returns:
        确定性的 numpy Generator
    """
    return np.random.default_rng(derive_seed_sequence(seed, *keys))


def derive_int_seed(seed: int, *keys: SeedKey) -> int:
    """派生一个 63 位整数种子，用于传给子任务"""
    state = derive_seed_sequence(seed, *keys).generate_state(2, dtype=np.uint32)
    return int((int(state[0]) << 31) ^ int(state[1])) & ((1 << 63) - 1)
