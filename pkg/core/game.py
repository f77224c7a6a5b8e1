"""
博弈核心表示。

职责：
    - 定义博弈维度、动作组合、聚合计数 x^{-i} 以及混合策略。
    - 提供聚合映射 σ、聚合计数空间 𝕏 的字典序编号（rank / unrank）。
    - 匿名多矩阵博弈（每个智能体一个成对收益矩阵）与一般匿名博弈（简洁收益表）。
    - 完整收益表与简洁表示之间的转换，并在转换时校验匿名性。
    - 个体形式与聚合形式的期望收益计算、最优反应（最小下标打破平局）。

𝕏 的编号约定：按计数向量的字典序升序，rank 通过累积二项式系数 O(n) 计算。
"""
import itertools
import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Dict, Optional, Sequence, Tuple, Union

import numpy as np

from utils.utils import check_simplex

# 最优反应的平局判定容差（相对最大值），两种信念表示在舍入误差内给出相同选择
TIE_TOL = 1e-12


class NotAnonymousError(ValueError):
    """完整收益表不满足匿名性：同一置换类中的两个动作组合收益不同。"""

    def __init__(self, agent: int, profile_a: Tuple[int, ...], profile_b: Tuple[int, ...],
                 value_a: float, value_b: float):
        self.agent = agent
        self.profile_a = profile_a
        self.profile_b = profile_b
        super().__init__(
            f"智能体 {agent} 的收益不满足匿名性: r{profile_a}={value_a!r} 与 r{profile_b}={value_b!r} 属于同一置换类"
        )


@dataclass(frozen=True)
class GameDims:
    """博弈维度：智能体数 N（≥2）与共享动作数 n（≥1）。"""
    num_agents: int
    num_actions: int

    def __post_init__(self):
        if int(self.num_agents) != self.num_agents or self.num_agents < 2:
            raise ValueError(f"智能体数 N 必须为 ≥2 的整数: {self.num_agents}")
        if int(self.num_actions) != self.num_actions or self.num_actions < 1:
            raise ValueError(f"动作数 n 必须为 ≥1 的整数: {self.num_actions}")

    @property
    def num_counts(self) -> int:
        """|𝕏| = C(N+n-2, n-1)。"""
        return math.comb(self.num_agents + self.num_actions - 2, self.num_actions - 1)

    @property
    def full_size(self) -> int:
        """每个智能体完整收益表的条目数 n^N。"""
        return self.num_actions ** self.num_agents


@dataclass(frozen=True)
class AggregateCount:
    """对手聚合计数：counts[b] 为（除自身外）选择动作 b 的智能体数量。"""
    counts: Tuple[int, ...]
    rank: int


def succinct_size(dims: GameDims) -> int:
    """简洁表示的条目数 n·C(N+n-2, n-1)。"""
    return dims.num_actions * dims.num_counts


def validate_profile(profile: Sequence[int], dims: GameDims) -> np.ndarray:
    """校验联合动作：长度为 N，每个分量在 [0, n) 内。"""
    arr = np.asarray(profile)
    if arr.ndim != 1 or arr.size != dims.num_agents:
        raise ValueError(f"动作组合长度必须为 {dims.num_agents}: {profile}")
    if not np.issubdtype(arr.dtype, np.integer):
        raise ValueError(f"动作组合必须为整数向量: {profile}")
    if arr.min() < 0 or arr.max() >= dims.num_actions:
        raise ValueError(f"动作超出范围 [0, {dims.num_actions}): {profile}")
    return arr.astype(np.int64)


# ---------------- 𝕏 的编号 ----------------
def _check_counts(counts: Sequence[int], dims: GameDims) -> Tuple[int, ...]:
    vals = tuple(int(c) for c in counts)
    if len(vals) != dims.num_actions:
        raise ValueError(f"计数向量长度必须为 {dims.num_actions}: {counts}")
    if any(c < 0 for c in vals) or sum(vals) != dims.num_agents - 1:
        raise ValueError(f"计数向量必须非负且和为 {dims.num_agents - 1}: {counts}")
    return vals


def rank_count(counts: Sequence[int], dims: GameDims) -> int:
    """返回计数向量在 𝕏 中的字典序编号。"""
    vals = _check_counts(counts, dims)
    n = dims.num_actions
    remaining = dims.num_agents - 1
    rank = 0
    for j in range(n - 1):
        parts = n - j - 1
        # 当前位取更小值 v 时，剩余 remaining-v 分成 parts 份的方案数
        for v in range(vals[j]):
            rank += math.comb(remaining - v + parts - 1, parts - 1)
        remaining -= vals[j]
    return rank


def unrank_count(rank: int, dims: GameDims) -> AggregateCount:
    """rank_count 的逆映射。"""
    if not 0 <= rank < dims.num_counts:
        raise ValueError(f"编号超出范围 [0, {dims.num_counts}): {rank}")
    n = dims.num_actions
    remaining = dims.num_agents - 1
    left = int(rank)
    counts = []
    for j in range(n - 1):
        parts = n - j - 1
        v = 0
        while True:
            block = math.comb(remaining - v + parts - 1, parts - 1)
            if left < block:
                break
            left -= block
            v += 1
        counts.append(v)
        remaining -= v
    counts.append(remaining)
    return AggregateCount(tuple(counts), int(rank))


class CountIndex:
    """𝕏 的完整枚举：table[r] 为编号 r 的计数向量，lookup 为反查字典。"""

    def __init__(self, dims: GameDims):
        self.dims = dims
        self.table = np.array(
            [unrank_count(r, dims).counts for r in range(dims.num_counts)], dtype=np.int64
        ).reshape(dims.num_counts, dims.num_actions)
        self.lookup: Dict[Tuple[int, ...], int] = {tuple(row): r for r, row in enumerate(self.table.tolist())}

    def rank(self, counts: Sequence[int]) -> int:
        return self.lookup[tuple(int(c) for c in counts)]


@lru_cache(maxsize=64)
def get_count_index(dims: GameDims) -> CountIndex:
    """按维度缓存的 𝕏 枚举（只读，可跨线程共享）。"""
    return CountIndex(dims)


def count_actions(profile: np.ndarray, num_actions: int) -> np.ndarray:
    """整个联合动作中每个动作的出现次数。"""
    return np.bincount(profile, minlength=num_actions)


def sigma(profile: Sequence[int], excluded: int, dims: GameDims) -> AggregateCount:
    """聚合映射 σ(a^{-i})：统计除 excluded 之外各动作的智能体数量。"""
    arr = validate_profile(profile, dims)
    if not 0 <= excluded < dims.num_agents:
        raise ValueError(f"智能体下标超出范围 [0, {dims.num_agents}): {excluded}")
    counts = count_actions(arr, dims.num_actions)
    counts[arr[excluded]] -= 1
    return AggregateCount(tuple(int(c) for c in counts), get_count_index(dims).rank(counts))


def opponent_ranks(profile: np.ndarray, dims: GameDims) -> np.ndarray:
    """一次性计算所有智能体的 rank(σ(a^{-i}))，供模拟主循环使用（不做校验）。"""
    index = get_count_index(dims)
    total = count_actions(profile, dims.num_actions)
    ranks = np.empty(dims.num_agents, dtype=np.int64)
    for i, a in enumerate(profile):
        total[a] -= 1
        ranks[i] = index.lookup[tuple(total.tolist())]
        total[a] += 1
    return ranks


# ---------------- 收益表示 ----------------
@dataclass(frozen=True, eq=False)
class SuccinctReward:
    """单个智能体的简洁收益表 r̄^i，形状 n × |𝕏|。"""
    dims: GameDims
    table: np.ndarray

    def __post_init__(self):
        shape = (self.dims.num_actions, self.dims.num_counts)
        if self.table.shape != shape:
            raise ValueError(f"简洁收益表形状应为 {shape}，实际 {self.table.shape}")


@dataclass(frozen=True, eq=False)
class FullRewardTable:
    """完整收益表：tables[i] 的形状为 (n,)*N，按联合动作索引。"""
    dims: GameDims
    tables: np.ndarray

    def __post_init__(self):
        shape = (self.dims.num_agents,) + (self.dims.num_actions,) * self.dims.num_agents
        if self.tables.shape != shape:
            raise ValueError(f"完整收益表形状应为 {shape}，实际 {self.tables.shape}")
        if not np.all(np.isfinite(self.tables)):
            raise ValueError("完整收益表存在缺失或非有限值")


def _opponent_beliefs(beliefs: np.ndarray, agent: int, dims: GameDims) -> np.ndarray:
    """接受 N×n（忽略自身行）或 (N-1)×n 的信念数组，返回对手信念 (N-1)×n。"""
    arr = np.asarray(beliefs, dtype=np.float64)
    if arr.shape == (dims.num_agents, dims.num_actions):
        return np.delete(arr, agent, axis=0)
    if arr.shape == (dims.num_agents - 1, dims.num_actions):
        return arr
    raise ValueError(f"信念数组形状应为 {(dims.num_agents, dims.num_actions)} 或 "
                     f"{(dims.num_agents - 1, dims.num_actions)}，实际 {arr.shape}")


@dataclass(frozen=True, eq=False)
class AnonymousPolymatrixGame:
    """
    匿名多矩阵博弈。

    pairwise[i] 为智能体 i 的 n×n 成对收益矩阵 M^i，对所有对手统一使用：
    r^i(a^i, a^{-i}) = Σ_{j≠i} M^i[a^i][a^j]。
    """
    dims: GameDims
    pairwise: np.ndarray

    def __post_init__(self):
        shape = (self.dims.num_agents, self.dims.num_actions, self.dims.num_actions)
        if self.pairwise.shape != shape:
            raise ValueError(f"成对收益矩阵形状应为 {shape}，实际 {self.pairwise.shape}")
        if not np.all(np.isfinite(self.pairwise)):
            raise ValueError("成对收益矩阵存在非有限值")

    @classmethod
    def uniform(cls, dims: GameDims, matrix: Sequence[Sequence[float]]) -> "AnonymousPolymatrixGame":
        """所有智能体共用同一成对矩阵。"""
        mat = np.asarray(matrix, dtype=np.float64)
        return cls(dims, np.broadcast_to(mat, (dims.num_agents,) + mat.shape).copy())

    @classmethod
    def random(cls, dims: GameDims, rng: np.random.Generator, low: float = -1.0,
               high: float = 1.0) -> "AnonymousPolymatrixGame":
        """成对矩阵元素在 [low, high] 上独立均匀抽样。"""
        shape = (dims.num_agents, dims.num_actions, dims.num_actions)
        return cls(dims, rng.uniform(low, high, size=shape))

    def reward(self, agent: int, profile: Sequence[int]) -> float:
        arr = np.asarray(profile)
        mat = self.pairwise[agent]
        return float(sum(mat[arr[agent], arr[j]] for j in range(self.dims.num_agents) if j != agent))

    def expected_rewards(self, agent: int, beliefs: np.ndarray) -> np.ndarray:
        """R^i(·, π^{-i}) = Σ_{j≠i} M^i π^j（不校验输入）。"""
        opp = _opponent_beliefs(beliefs, agent, self.dims)
        return self.pairwise[agent] @ opp.sum(axis=0)

    def succinct(self, agent: int) -> SuccinctReward:
        return expand_polymatrix(self, agent)

    def max_abs_reward(self) -> float:
        """单个智能体收益绝对值的上界 (N-1)·max|M|。"""
        return float((self.dims.num_agents - 1) * np.abs(self.pairwise).max())


@dataclass(frozen=True, eq=False)
class SuccinctGame:
    """一般匿名博弈（不一定是多矩阵），由每个智能体的简洁收益表给出，形状 N × n × |𝕏|。"""
    dims: GameDims
    tables: np.ndarray

    def __post_init__(self):
        shape = (self.dims.num_agents, self.dims.num_actions, self.dims.num_counts)
        if self.tables.shape != shape:
            raise ValueError(f"简洁收益表形状应为 {shape}，实际 {self.tables.shape}")

    @classmethod
    def random(cls, dims: GameDims, rng: np.random.Generator) -> "SuccinctGame":
        shape = (dims.num_agents, dims.num_actions, dims.num_counts)
        return cls(dims, rng.uniform(-1.0, 1.0, size=shape))

    def reward(self, agent: int, profile: Sequence[int]) -> float:
        arr = np.asarray(profile)
        return float(self.tables[agent, arr[agent], sigma(arr, agent, self.dims).rank])

    def expected_rewards(self, agent: int, beliefs: np.ndarray) -> np.ndarray:
        """个体信念下的期望收益：先求聚合分布再与简洁表做内积。"""
        mu = aggregate_distribution(_opponent_beliefs(beliefs, agent, self.dims))
        return self.tables[agent] @ mu

    def succinct(self, agent: int) -> SuccinctReward:
        return SuccinctReward(self.dims, self.tables[agent])


Game = Union[AnonymousPolymatrixGame, SuccinctGame]


def expand_polymatrix(game: AnonymousPolymatrixGame, agent: int) -> SuccinctReward:
    """r̄^i(a, x) = Σ_b x[b]·M^i[a][b]。"""
    index = get_count_index(game.dims)
    table = game.pairwise[agent] @ index.table.T.astype(np.float64)
    return SuccinctReward(game.dims, table)


def expand_full_table(game: Game) -> FullRewardTable:
    """枚举全部 n^N 个联合动作得到完整收益表。"""
    dims = game.dims
    grids = np.indices((dims.num_actions,) * dims.num_agents)
    tables = np.zeros((dims.num_agents,) + grids.shape[1:], dtype=np.float64)
    if isinstance(game, AnonymousPolymatrixGame):
        for i in range(dims.num_agents):
            mat = game.pairwise[i]
            for j in range(dims.num_agents):
                if j != i:
                    tables[i] += mat[grids[i], grids[j]]
        return FullRewardTable(dims, tables)
    for profile in itertools.product(range(dims.num_actions), repeat=dims.num_agents):
        for i in range(dims.num_agents):
            tables[(i,) + profile] = game.reward(i, profile)
    return FullRewardTable(dims, tables)


def succinct_from_full(full: FullRewardTable, agent: int, atol: float = 0.0) -> SuccinctReward:
    """
    由完整收益表构造简洁表示，同时校验匿名性。

    默认按存储值精确比较；atol > 0 时允许估计噪声带来的偏差。
    同一 (a^i, x^{-i}) 类中首个不一致的组合对以 NotAnonymousError 报告。
    """
    dims = full.dims
    if not 0 <= agent < dims.num_agents:
        raise ValueError(f"智能体下标超出范围 [0, {dims.num_agents}): {agent}")
    index = get_count_index(dims)
    table = np.zeros((dims.num_actions, dims.num_counts), dtype=np.float64)
    representative: Dict[Tuple[int, int], Tuple[int, ...]] = {}
    values = full.tables[agent]
    for profile in itertools.product(range(dims.num_actions), repeat=dims.num_agents):
        counts = [0] * dims.num_actions
        for j, a in enumerate(profile):
            if j != agent:
                counts[a] += 1
        key = (profile[agent], index.lookup[tuple(counts)])
        value = float(values[profile])
        if key not in representative:
            representative[key] = profile
            table[key] = value
        elif abs(value - table[key]) > atol:
            raise NotAnonymousError(agent, representative[key], profile, float(table[key]), value)
    return SuccinctReward(dims, table)


def aggregate_distribution(beliefs: np.ndarray) -> np.ndarray:
    """
    对手动作独立服从各自信念时 σ(A^{-i}) 的精确分布（按 𝕏 编号排列）。

    逐个加入对手做卷积，中间分布以计数元组为键，规模不超过 |𝕏|。
    """
    opp = np.asarray(beliefs, dtype=np.float64)
    if opp.ndim != 2 or opp.shape[0] < 1:
        raise ValueError(f"对手信念应为 (N-1)×n 数组，实际形状 {opp.shape}")
    m, n = opp.shape
    rows = [check_simplex(row, name=f"对手信念[{j}]") for j, row in enumerate(opp)]
    dist: Dict[Tuple[int, ...], float] = {(0,) * n: 1.0}
    for p in rows:
        nxt: Dict[Tuple[int, ...], float] = {}
        for counts, mass in dist.items():
            for b in range(n):
                if p[b] == 0.0:
                    continue
                key = counts[:b] + (counts[b] + 1,) + counts[b + 1:]
                nxt[key] = nxt.get(key, 0.0) + mass * p[b]
        dist = nxt
    index = get_count_index(GameDims(m + 1, n))
    out = np.zeros(index.dims.num_counts, dtype=np.float64)
    for counts, mass in dist.items():
        out[index.lookup[counts]] = mass
    return out


def expected_reward_individual(game: Game, agent: int, beliefs: np.ndarray) -> np.ndarray:
    """R^i(a^i, π^{-i})，对每条对手信念做单纯形校验。"""
    if not 0 <= agent < game.dims.num_agents:
        raise ValueError(f"智能体下标超出范围 [0, {game.dims.num_agents}): {agent}")
    opp = _opponent_beliefs(beliefs, agent, game.dims)
    for j, row in enumerate(opp):
        check_simplex(row, name=f"对手信念[{j}]")
    return game.expected_rewards(agent, opp)


def expected_reward_aggregate(succinct: SuccinctReward, mu: np.ndarray) -> np.ndarray:
    """R̄^i(a^i, μ^i) = Σ_x μ(x)·r̄^i(a^i, x)。"""
    arr = check_simplex(mu, name="聚合信念")
    if arr.size != succinct.dims.num_counts:
        raise ValueError(f"聚合信念长度应为 |𝕏|={succinct.dims.num_counts}，实际 {arr.size}")
    return succinct.table @ arr


def best_response(rewards: Sequence[float], tie_break: str = "smallest", tol: float = 0.0) -> int:
    """
    最优反应动作下标。

    与最大值相差不超过 tol·max(1, |max|) 的动作视为并列，默认取最小下标；
    tie_break="largest" 仅用于等价性测试的反例对照。
    """
    arr = np.asarray(rewards, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError("最优反应需要非空的一维收益向量")
    top = arr.max()
    tied = np.flatnonzero(arr >= top - tol * max(1.0, abs(top)))
    if tie_break == "smallest":
        return int(tied[0])
    if tie_break == "largest":
        return int(tied[-1])
    raise ValueError(f"未知的平局规则: {tie_break}")


# ---------------- 混合策略与均衡诊断 ----------------
@dataclass(frozen=True, eq=False)
class MixedProfile:
    """每个智能体一条动作概率向量，形状 N × n。"""
    probs: np.ndarray = field(repr=False)

    def __post_init__(self):
        arr = np.asarray(self.probs, dtype=np.float64)
        if arr.ndim != 2:
            raise ValueError(f"混合策略应为 N×n 数组，实际形状 {arr.shape}")
        for i, row in enumerate(arr):
            check_simplex(row, name=f"策略 π^{i}", tol=1e-12)
        object.__setattr__(self, "probs", arr)

    @classmethod
    def uniform(cls, dims: GameDims) -> "MixedProfile":
        return cls(np.full((dims.num_agents, dims.num_actions), 1.0 / dims.num_actions))

    @classmethod
    def pure(cls, profile: Sequence[int], dims: GameDims) -> "MixedProfile":
        arr = validate_profile(profile, dims)
        return cls(np.eye(dims.num_actions)[arr])


def exploitability(game: Game, profile: MixedProfile) -> float:
    """Σ_i (max_a R^i(a, π^{-i}) − R^i(π^i, π^{-i}))，为 0 当且仅当是纳什均衡。"""
    total = 0.0
    for i in range(game.dims.num_agents):
        values = game.expected_rewards(i, profile.probs)
        total += float(values.max() - values @ profile.probs[i])
    return total


def is_epsilon_nash(game: Game, profile: MixedProfile, eps: float) -> bool:
    """任何智能体单方面偏离的收益增量都不超过 eps。"""
    for i in range(game.dims.num_agents):
        values = game.expected_rewards(i, profile.probs)
        if values.max() - values @ profile.probs[i] > eps:
            return False
    return True


def is_zero_sum(game: Game, atol: float = 1e-12, full: Optional[FullRewardTable] = None) -> bool:
    """穷举所有联合动作检查 Σ_i r^i(a) = 0。"""
    full = full or expand_full_table(game)
    return bool(np.all(np.abs(full.tables.sum(axis=0)) <= atol))
