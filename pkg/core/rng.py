"""
随机数流管理。

所有模拟都使用 numpy 的 Philox（计数器型位生成器）。一个根种子通过
SeedSequence(seed, spawn_key=(index,)) 派生出若干具名子流，子流的编号固定，
因此同一种子、同一用途在任何实现中得到相同的随机序列：

    exploration   探索硬币与均匀探索动作（FP / agg-FP / 双时间尺度算法共享）
    perturbation  收益扰动 θ^i_k（三种模型无关算法共享同一实现）
    initial       初始动作 a_0
    instances     等价性测试套件中的随机博弈实例
"""
from typing import Dict

import numpy as np

STREAM_NAMES = ("exploration", "perturbation", "initial", "instances")


def make_generator(seed: int, stream: str) -> np.random.Generator:
    """按根种子与用途名称构造独立的 Philox 生成器。"""
    if stream not in STREAM_NAMES:
        raise ValueError(f"未知的随机流名称: {stream}，可选 {STREAM_NAMES}")
    if seed < 0:
        raise ValueError(f"种子必须为非负整数: {seed}")
    seq = np.random.SeedSequence(int(seed), spawn_key=(STREAM_NAMES.index(stream),))
    return np.random.Generator(np.random.Philox(seq))


class RandomStreams:
    """一次运行使用的全部具名随机流，按需惰性创建。"""

    def __init__(self, seed: int):
        self.seed = int(seed)
        self._streams: Dict[str, np.random.Generator] = {}

    def get(self, stream: str) -> np.random.Generator:
        if stream not in self._streams:
            self._streams[stream] = make_generator(self.seed, stream)
        return self._streams[stream]

    @property
    def exploration(self) -> np.random.Generator:
        return self.get("exploration")

    @property
    def perturbation(self) -> np.random.Generator:
        return self.get("perturbation")

    @property
    def initial(self) -> np.random.Generator:
        return self.get("initial")

    @property
    def instances(self) -> np.random.Generator:
        return self.get("instances")
