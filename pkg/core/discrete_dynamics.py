"""
离散时间重复博弈动态：经典虚拟博弈（FP）与聚合虚拟博弈（agg-FP）。

职责：
    - 步长序列 α_k = scale·(k+1)^(-exponent)。
    - 信念更新：个体信念 π̂^j、聚合信念 μ̂^i、经验动作频率 γ̂^i。
    - δ-贪心探索（集体探索或逐个智能体独立探索）。
    - 单步动作选择 fp_step / aggfp_step 以及完整的重复博弈运行 run_repeated_play。

时序约定：第 k 步先观察联合动作 a_k 并用 α_k 更新信念（k=0 时初始化为点质量），
再为第 k+1 步选择动作。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Callable, List, Optional, Sequence

import numpy as np

from core.game import (
    TIE_TOL,
    Game,
    GameDims,
    SuccinctReward,
    aggregate_distribution,
    best_response,
    opponent_ranks,
    validate_profile,
)
from core.rng import RandomStreams
from utils.utils import SIMPLEX_TOL, check_simplex, simplex_drift

logger = logging.getLogger("AggFP")

ALGORITHMS = ("fp", "aggfp")


@dataclass(frozen=True)
class StepSizeSchedule:
    """
    步长序列 α_k = scale·(k+1)^(-exponent)。

    exponent ∈ (0.5, 1] 且 scale > 0 时满足 Robbins-Monro 条件；
    exponent=0（常数步长）或 scale=0（冻结）只用于退化对照实验。
    """
    exponent: float = 1.0
    scale: float = 1.0

    def __post_init__(self):
        if not 0.0 <= self.exponent <= 1.0:
            raise ValueError(f"步长指数必须在 [0, 1] 内: {self.exponent}")
        if not 0.0 <= self.scale <= 1.0:
            raise ValueError(f"步长系数必须在 [0, 1] 内: {self.scale}")

    def __call__(self, k: int) -> float:
        return self.scale * (k + 1) ** (-self.exponent)

    @property
    def robbins_monro(self) -> bool:
        return 0.5 < self.exponent <= 1.0 and self.scale > 0.0


@dataclass(frozen=True)
class ExplorationConfig:
    """δ-贪心探索：shared_coin=True 时所有智能体共用一枚硬币（集体探索）。"""
    delta: float = 0.0
    shared_coin: bool = True

    def __post_init__(self):
        if not 0.0 <= self.delta < 1.0:
            raise ValueError(f"探索概率 δ 必须在 [0, 1) 内: {self.delta}")


def _check_alpha(alpha: float):
    if not 0.0 < alpha <= 1.0:
        raise ValueError(f"步长 α 必须在 (0, 1] 内: {alpha}")


def fp_belief_update(belief: Sequence[float], action: int, alpha: float) -> np.ndarray:
    """π̂ ← π̂ + α(e_a − π̂)。"""
    _check_alpha(alpha)
    arr = check_simplex(belief, name="个体信念")
    if not 0 <= action < arr.size:
        raise ValueError(f"动作超出范围 [0, {arr.size}): {action}")
    target = np.zeros_like(arr)
    target[action] = 1.0
    return arr + alpha * (target - arr)


def aggfp_belief_update(mu: Sequence[float], rank: int, alpha: float) -> np.ndarray:
    """μ̂ ← μ̂ + α(e_x − μ̂)，x 为观察到的聚合计数编号。"""
    _check_alpha(alpha)
    arr = check_simplex(mu, name="聚合信念")
    if not 0 <= rank < arr.size:
        raise ValueError(f"聚合计数编号超出范围 [0, {arr.size}): {rank}")
    target = np.zeros_like(arr)
    target[rank] = 1.0
    return arr + alpha * (target - arr)


def empirical_update(gamma: Sequence[float], action: int, alpha: float) -> np.ndarray:
    """γ̂ ← γ̂ + α(e_a − γ̂)，自身动作的经验频率。"""
    _check_alpha(alpha)
    arr = check_simplex(gamma, name="经验频率")
    if not 0 <= action < arr.size:
        raise ValueError(f"动作超出范围 [0, {arr.size}): {action}")
    target = np.zeros_like(arr)
    target[action] = 1.0
    return arr + alpha * (target - arr)


def closed_form_weights(schedule: StepSizeSchedule, k: int) -> np.ndarray:
    """
    k 步后信念中各历史观测的权重 ᾱ_0..ᾱ_k：ᾱ_l = α_l·Π_{m=l+1}^{k}(1−α_m)，
    其中 α_0 ≡ 1 对应点质量初始化。
    """
    alphas = np.array([1.0] + [schedule(m) for m in range(1, k + 1)])
    weights = np.empty(k + 1)
    tail = 1.0
    for l in range(k, -1, -1):
        weights[l] = alphas[l] * tail
        tail *= 1.0 - alphas[l]
    return weights


class BeliefState:
    """
    一次模拟中全部智能体的信念。

    individual: N×n，π̂^j（所有智能体观察相同动作、使用相同步长，故只存一份）
    aggregate:  N×|𝕏|，μ̂^i（各智能体不同，分别存储）
    empirical:  N×n，γ̂^i
    """

    def __init__(self, dims: GameDims, schedule: StepSizeSchedule):
        self.dims = dims
        self.schedule = schedule
        self.k = -1
        self.individual = np.zeros((dims.num_agents, dims.num_actions))
        self.aggregate = np.zeros((dims.num_agents, dims.num_counts))
        self.empirical = np.zeros((dims.num_agents, dims.num_actions))
        self._rows = np.arange(dims.num_agents)

    def observe(self, profile: np.ndarray, k: int) -> None:
        """观察第 k 步的联合动作：k=0 初始化为点质量，否则按 α_k 更新。"""
        if k != self.k + 1:
            raise ValueError(f"信念更新必须按步连续进行：当前 {self.k}，收到 {k}")
        ranks = opponent_ranks(profile, self.dims)
        action_targets = np.zeros_like(self.individual)
        action_targets[self._rows, profile] = 1.0
        count_targets = np.zeros_like(self.aggregate)
        count_targets[self._rows, ranks] = 1.0
        if k == 0:
            self.individual = action_targets
            self.aggregate = count_targets
            self.empirical = action_targets.copy()
        else:
            alpha = self.schedule(k)
            _check_alpha(alpha)
            self.individual = self.individual + alpha * (action_targets - self.individual)
            self.aggregate = self.aggregate + alpha * (count_targets - self.aggregate)
            self.empirical = self.empirical + alpha * (action_targets - self.empirical)
            drift = max(simplex_drift(self.individual), simplex_drift(self.aggregate))
            if drift > SIMPLEX_TOL:
                raise ArithmeticError(f"第 {k} 步信念偏离单纯形 {drift:.3e}")
        self.k = k

    def aggregate_gap(self, agent: int) -> float:
        """max_x |μ̂^i(x) − P(σ(A^{-i})=x)|，其中 A^j ~ π̂^j 独立。"""
        mu_ind = aggregate_distribution(np.delete(self.individual, agent, axis=0))
        return float(np.abs(mu_ind - self.aggregate[agent]).max())


def explore(rng: np.random.Generator, dims: GameDims, exploration: ExplorationConfig) -> Optional[np.ndarray]:
    """
    掷探索硬币。返回 None 表示所有智能体贪心；否则返回长度 N 的数组，
    -1 表示该智能体贪心，其余为均匀抽取的探索动作。δ=0 时不消耗随机数。
    """
    if exploration.delta <= 0.0:
        return None
    if exploration.shared_coin:
        if rng.random() < exploration.delta:
            # 按智能体顺序依次抽取
            return rng.integers(dims.num_actions, size=dims.num_agents)
        return None
    choice = np.full(dims.num_agents, -1, dtype=np.int64)
    for i in range(dims.num_agents):
        if rng.random() < exploration.delta:
            choice[i] = rng.integers(dims.num_actions)
    return choice


def _select(greedy: Callable[[int], int], explored: Optional[np.ndarray], num_agents: int) -> np.ndarray:
    nxt = np.empty(num_agents, dtype=np.int64)
    for i in range(num_agents):
        if explored is not None and explored[i] >= 0:
            nxt[i] = explored[i]
        else:
            nxt[i] = greedy(i)
    return nxt


def fp_step(state: BeliefState, game: Game, profile: np.ndarray, k: int, rng: np.random.Generator,
            exploration: ExplorationConfig, tie_break: str = "smallest") -> np.ndarray:
    """FP 单步：用 a_k 更新个体信念后，对 R^i(·, π̂^{-i}_k) 做最优反应。"""
    state.observe(profile, k)
    explored = explore(rng, state.dims, exploration)
    return _select(
        lambda i: best_response(game.expected_rewards(i, state.individual), tie_break, TIE_TOL),
        explored,
        state.dims.num_agents,
    )


def aggfp_step(state: BeliefState, succinct: List[SuccinctReward], profile: np.ndarray, k: int,
               rng: np.random.Generator, exploration: ExplorationConfig,
               tie_break: str = "smallest") -> np.ndarray:
    """agg-FP 单步：用 x_k 更新聚合信念后，对 R̄^i(·, μ̂^i_k) 做最优反应。"""
    state.observe(profile, k)
    explored = explore(rng, state.dims, exploration)
    return _select(
        lambda i: best_response(succinct[i].table @ state.aggregate[i], tie_break, TIE_TOL),
        explored,
        state.dims.num_agents,
    )


@dataclass
class TrajectoryRecord:
    """一次运行的轨迹记录：逐步动作与按步长间隔采样的信念快照。"""
    algorithm: str
    seed: int
    actions: np.ndarray
    snapshot_steps: np.ndarray
    empirical: np.ndarray
    individual: Optional[np.ndarray] = None
    aggregate: Optional[np.ndarray] = None
    series: dict = field(default_factory=dict)


def initial_profile(dims: GameDims, streams: RandomStreams,
                    initial_actions: Optional[Sequence[int]] = None) -> np.ndarray:
    """给定初始动作则校验后使用，否则从 initial 随机流均匀抽取。"""
    if initial_actions is not None:
        return validate_profile(list(initial_actions), dims)
    return streams.initial.integers(dims.num_actions, size=dims.num_agents).astype(np.int64)


def run_repeated_play(algorithm: str, game: Game, steps: int, seed: int,
                      schedule: Optional[StepSizeSchedule] = None,
                      exploration: Optional[ExplorationConfig] = None,
                      snapshot_stride: int = 100,
                      initial_actions: Optional[Sequence[int]] = None,
                      tie_break: str = "smallest",
                      observer: Optional[Callable[[int, BeliefState], None]] = None) -> TrajectoryRecord:
    """
    运行 K 步已知博弈上的 FP 或 agg-FP。

    固定种子下结果逐位可复现；observer 在每步信念更新后被调用（用于逐步校验）。
    """
    if algorithm not in ALGORITHMS:
        raise ValueError(f"未知算法: {algorithm}，可选 {ALGORITHMS}")
    if steps < 1:
        raise ValueError(f"步数 K 必须 ≥1: {steps}")
    if snapshot_stride < 1:
        raise ValueError(f"快照间隔必须 ≥1: {snapshot_stride}")
    schedule = schedule or StepSizeSchedule()
    exploration = exploration or ExplorationConfig()
    dims = game.dims
    streams = RandomStreams(seed)
    rng = streams.exploration
    profile = initial_profile(dims, streams, initial_actions)

    succinct = [game.succinct(i) for i in range(dims.num_agents)] if algorithm == "aggfp" else None
    state = BeliefState(dims, schedule)
    num_snaps = math.ceil(steps / snapshot_stride)
    actions = np.empty((steps, dims.num_agents), dtype=np.int64)
    snap_steps = np.empty(num_snaps, dtype=np.int64)
    empirical = np.empty((num_snaps, dims.num_agents, dims.num_actions))
    individual = np.empty((num_snaps, dims.num_agents, dims.num_actions))
    aggregate = np.empty((num_snaps, dims.num_agents, dims.num_counts))

    for k in range(steps):
        actions[k] = profile
        if algorithm == "fp":
            nxt = fp_step(state, game, profile, k, rng, exploration, tie_break)
        else:
            nxt = aggfp_step(state, succinct, profile, k, rng, exploration, tie_break)
        if observer is not None:
            observer(k, state)
        if k % snapshot_stride == 0:
            s = k // snapshot_stride
            snap_steps[s] = k
            empirical[s] = state.empirical
            individual[s] = state.individual
            aggregate[s] = state.aggregate
        profile = nxt

    logger.debug(f"{algorithm} 运行完成: seed={seed}, K={steps}, δ={exploration.delta}")
    return TrajectoryRecord(algorithm, seed, actions, snap_steps, empirical, individual, aggregate)


def reward_gap(game: Game, state: BeliefState,
               succinct: Optional[List[SuccinctReward]] = None) -> float:
    """
    max_{i,a} |R^i(a, π̂^{-i}) − R̄^i(a, μ̂^i)|，两种信念表示下期望收益的差距。

    多矩阵博弈上恒为零；一般匿名博弈（SuccinctGame）上用于展示两者可以不同。
    """
    dims = game.dims
    succinct = succinct or [game.succinct(i) for i in range(dims.num_agents)]
    gap = 0.0
    for i in range(dims.num_agents):
        ind = game.expected_rewards(i, state.individual)
        agg = succinct[i].table @ state.aggregate[i]
        gap = max(gap, float(np.abs(ind - agg).max()))
    return gap


def belief_gap(history: Sequence[Sequence[int]], dims: GameDims, schedule: StepSizeSchedule,
               agent: int) -> float:
    """沿给定历史更新信念后，聚合信念与个体信念诱导的聚合分布之间的最大差。"""
    if not history:
        raise ValueError("历史不能为空")
    state = BeliefState(dims, schedule)
    for k, profile in enumerate(history):
        state.observe(validate_profile(list(profile), dims), k)
    return state.aggregate_gap(agent)
