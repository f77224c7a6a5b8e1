"""
模型无关（收益未知）的学习算法。

职责：
    - 随机收益的匿名多矩阵博弈：r^i_θ = r^i + θ^i，θ^i 服从有限支撑分布。
    - Q 表（按访问次数选取步长 β_#）与双时间尺度步长。
    - 双时间尺度 agg-FP：快速估计简洁收益 r̄^i，慢速更新聚合信念，贪心 + δ 探索。
    - 两个对照基线：双时间尺度 FP（Q 表按完整对手组合索引）与个体 Q 学习（Boltzmann 选动作）。
    - Q 误差与到纳什均衡的 l1 距离两个指标。

三种算法在同一种子下共用同一份预先抽取的扰动序列 θ^i_k、同一初始动作与同一探索随机流。
"""
import logging
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from core.discrete_dynamics import (
    BeliefState,
    ExplorationConfig,
    StepSizeSchedule,
    explore,
    initial_profile,
)
from core.game import (
    TIE_TOL,
    AnonymousPolymatrixGame,
    GameDims,
    MixedProfile,
    best_response,
    expand_full_table,
    opponent_ranks,
    validate_profile,
)
from core.rng import RandomStreams
from utils.utils import check_simplex

logger = logging.getLogger("AggFP")

ALGORITHMS = ("aggfp2t", "fp2t", "indq")

# 双时间尺度 FP 需要枚举 n^(N-1) 个对手组合
MAX_ENUMERATION_AGENTS = 6


class CapacityError(RuntimeError):
    """博弈规模超出完整对手组合枚举的上限。"""


@dataclass(frozen=True, eq=False)
class PayoffPerturbation:
    """加性收益扰动 θ 的有限支撑分布。"""
    support: np.ndarray
    probs: np.ndarray

    def __post_init__(self):
        support = np.asarray(self.support, dtype=np.float64)
        probs = check_simplex(self.probs, name="扰动概率")
        if support.ndim != 1 or support.size != probs.size:
            raise ValueError(f"扰动支撑与概率长度不一致: {support.size} vs {probs.size}")
        if not np.all(np.isfinite(support)):
            raise ValueError("扰动支撑必须有界")
        object.__setattr__(self, "support", support)
        object.__setattr__(self, "probs", probs)

    @classmethod
    def zero(cls) -> "PayoffPerturbation":
        return cls(np.zeros(1), np.ones(1))

    @property
    def mean(self) -> float:
        return float(self.support @ self.probs)

    @property
    def max_abs(self) -> float:
        return float(np.abs(self.support).max())

    def sample(self, rng: np.random.Generator, size=None):
        return rng.choice(self.support, p=self.probs, size=size)


@dataclass(frozen=True, eq=False)
class RandomPayoffGame:
    """随机收益博弈：基础匿名多矩阵博弈加上每个智能体独立的加性扰动。"""
    base: AnonymousPolymatrixGame
    perturbations: Tuple[PayoffPerturbation, ...]

    def __post_init__(self):
        if len(self.perturbations) != self.base.dims.num_agents:
            raise ValueError(f"扰动分布个数应为 {self.base.dims.num_agents}，实际 {len(self.perturbations)}")

    @property
    def dims(self) -> GameDims:
        return self.base.dims

    def means(self) -> np.ndarray:
        return np.array([p.mean for p in self.perturbations])

    def expected_succinct(self) -> np.ndarray:
        """E[r̄^i_Θ]，形状 N × n × |𝕏|。"""
        means = self.means()
        return np.stack([self.base.succinct(i).table + means[i] for i in range(self.dims.num_agents)])

    def expected_full(self) -> np.ndarray:
        """E[r^i_Θ] 按 (自身动作, 对手组合编号) 展开，形状 N × n × n^(N-1)。"""
        dims = self.dims
        full = expand_full_table(self.base).tables
        means = self.means()
        return np.stack([
            np.moveaxis(full[i], i, 0).reshape(dims.num_actions, -1) + means[i]
            for i in range(dims.num_agents)
        ])

    def reward_bound(self) -> float:
        """|r^i_θ| 的上界。"""
        return self.base.max_abs_reward() + max(p.max_abs for p in self.perturbations)


def sample_reward(game: RandomPayoffGame, profile: Sequence[int], agent: int, rng: np.random.Generator) -> float:
    """Σ_j M^i[a^i][a^j] + θ^i，θ^i 从该智能体的扰动分布抽取。"""
    arr = validate_profile(profile, game.dims)
    return game.base.reward(agent, arr) + float(game.perturbations[agent].sample(rng))


def draw_perturbations(game: RandomPayoffGame, steps: int, rng: np.random.Generator) -> np.ndarray:
    """预先抽取 K × N 的扰动实现，按智能体逐列抽取。"""
    theta = np.empty((steps, game.dims.num_agents))
    for i, pert in enumerate(game.perturbations):
        theta[:, i] = pert.sample(rng, size=steps)
    return theta


@dataclass(frozen=True)
class TwoTimescaleSchedule:
    """信念步长 α_k 与 Q 步长 β_k，默认 α_k=(k+1)^-0.7、β_k=(k+1)^-0.6。"""
    alpha: StepSizeSchedule = field(default_factory=lambda: StepSizeSchedule(0.7))
    beta: StepSizeSchedule = field(default_factory=lambda: StepSizeSchedule(0.6))

    @classmethod
    def from_exponents(cls, alpha_exponent: float = 0.7, beta_exponent: float = 0.6) -> "TwoTimescaleSchedule":
        return cls(StepSizeSchedule(alpha_exponent), StepSizeSchedule(beta_exponent))

    def check(self, horizon: int = 10 ** 6) -> Tuple[bool, str]:
        """在有限前缀上检查：两序列非增、α_k/β_k 严格递减，且指数满足 Robbins-Monro 条件。"""
        if not (self.alpha.robbins_monro and self.beta.robbins_monro):
            return False, "步长指数必须在 (0.5, 1] 内"
        if self.alpha.exponent <= self.beta.exponent:
            return False, "α 必须比 β 衰减得更快（α 指数 > β 指数）"
        ks = np.arange(horizon + 1, dtype=np.float64)
        alphas = self.alpha.scale * (ks + 1) ** (-self.alpha.exponent)
        betas = self.beta.scale * (ks + 1) ** (-self.beta.exponent)
        if np.any(np.diff(alphas) > 0) or np.any(np.diff(betas) > 0):
            return False, "步长序列必须非增"
        if np.any(np.diff(alphas / betas) >= 0):
            return False, "α_k/β_k 必须严格递减"
        return True, ""


class QTable:
    """每个智能体的 Q 估计与逐格访问计数，形状 N × n × columns。"""

    def __init__(self, num_agents: int, num_actions: int, columns: int, values: Optional[np.ndarray] = None):
        shape = (num_agents, num_actions, columns)
        self.values = np.zeros(shape) if values is None else np.array(values, dtype=np.float64)
        if self.values.shape != shape:
            raise ValueError(f"Q 表形状应为 {shape}，实际 {self.values.shape}")
        self.visits = np.zeros(shape, dtype=np.int64)

    def update(self, agent: int, action: int, column: int, reward: float, beta: StepSizeSchedule) -> float:
        """访问计数先加一，再以 β_# 向观测收益移动；只修改被访问的格子。"""
        self.visits[agent, action, column] += 1
        step = beta(int(self.visits[agent, action, column]))
        old = self.values[agent, action, column]
        self.values[agent, action, column] = old + step * (reward - old)
        return self.values[agent, action, column]


def q_update(qtable: QTable, agent: int, action: int, column: int, reward: float,
             schedule: TwoTimescaleSchedule) -> float:
    """Algorithm 中的 Q 表更新：Q(a, x) += β_{#(a,x)}·(R − Q(a, x))。"""
    return qtable.update(agent, action, column, reward, schedule.beta)


def q_error(qtable: QTable, game: RandomPayoffGame, kind: str = "aggregate",
            expected: Optional[np.ndarray] = None) -> float:
    """
    Q 表与期望收益的 l1 误差。

    kind="aggregate"：与 E[r̄^i_Θ] 比较（双时间尺度 agg-FP）；
    kind="full"：与按完整对手组合展开的 E[r^i_Θ] 比较（双时间尺度 FP）。
    """
    if kind not in ("aggregate", "full"):
        raise ValueError(f"未知的 Q 误差类型: {kind}")
    if expected is None:
        expected = game.expected_succinct() if kind == "aggregate" else game.expected_full()
    if expected.shape != qtable.values.shape:
        raise ValueError(f"Q 表形状 {qtable.values.shape} 与期望收益形状 {expected.shape} 不一致")
    return float(np.abs(qtable.values - expected).sum())


def ne_distance(gamma: np.ndarray, target: MixedProfile) -> float:
    """Σ_i ‖γ̂^i − π^i_*‖_1。"""
    arr = np.asarray(gamma, dtype=np.float64)
    if arr.shape != target.probs.shape:
        raise ValueError(f"经验频率形状 {arr.shape} 与目标均衡形状 {target.probs.shape} 不一致")
    return float(np.abs(arr - target.probs).sum())


@dataclass
class ModelFreeRecord:
    """模型无关算法的运行记录；指标序列与快照步一一对应。"""
    algorithm: str
    seed: int
    actions: np.ndarray
    snapshot_steps: np.ndarray
    empirical: np.ndarray
    ne_distance: np.ndarray
    q_error: Optional[np.ndarray]
    qtable: Optional[QTable] = None

    @property
    def final_ne_distance(self) -> float:
        return float(self.ne_distance[-1])

    @property
    def final_q_error(self) -> Optional[float]:
        return None if self.q_error is None else float(self.q_error[-1])


class _RunContext:
    """三种算法共用的初始化：随机流、初始动作、扰动实现与快照缓冲。"""

    def __init__(self, game: RandomPayoffGame, steps: int, seed: int, snapshot_stride: int,
                 initial_actions: Optional[Sequence[int]], perturbations: Optional[np.ndarray],
                 target: Optional[MixedProfile], with_q_error: bool):
        if steps < 1:
            raise ValueError(f"步数 K 必须 ≥1: {steps}")
        if snapshot_stride < 1:
            raise ValueError(f"快照间隔必须 ≥1: {snapshot_stride}")
        dims = game.dims
        self.dims = dims
        self.steps = steps
        self.stride = snapshot_stride
        self.streams = RandomStreams(seed)
        self.profile = initial_profile(dims, self.streams, initial_actions)
        if perturbations is None:
            perturbations = draw_perturbations(game, steps, self.streams.perturbation)
        if perturbations.shape[0] < steps or perturbations.shape[1] != dims.num_agents:
            raise ValueError(f"扰动序列形状不足: {perturbations.shape}")
        self.theta = perturbations
        self.target = target or MixedProfile.uniform(dims)
        self.succinct = [game.base.succinct(i).table for i in range(dims.num_agents)]
        num_snaps = math.ceil(steps / snapshot_stride)
        self.actions = np.empty((steps, dims.num_agents), dtype=np.int64)
        self.snap_steps = np.empty(num_snaps, dtype=np.int64)
        self.empirical = np.empty((num_snaps, dims.num_agents, dims.num_actions))
        self.ne = np.empty(num_snaps)
        self.q_err = np.empty(num_snaps) if with_q_error else None

    def rewards(self, k: int, ranks: np.ndarray) -> np.ndarray:
        """第 k 步实际收益：简洁表查表（基础收益）加上预抽取的扰动。"""
        base = np.array([self.succinct[i][a, x] for i, (a, x) in enumerate(zip(self.profile, ranks))])
        return base + self.theta[k]

    def snapshot(self, k: int, empirical: np.ndarray, q_err: Optional[float] = None):
        if k % self.stride:
            return
        s = k // self.stride
        self.snap_steps[s] = k
        self.empirical[s] = empirical
        self.ne[s] = ne_distance(empirical, self.target)
        if self.q_err is not None:
            self.q_err[s] = q_err


def _check_game(game: RandomPayoffGame):
    if not isinstance(game, RandomPayoffGame):
        raise ValueError(f"模型无关算法需要 RandomPayoffGame，收到 {type(game).__name__}")


def run_two_timescale_aggfp(game: RandomPayoffGame, steps: int, seed: int,
                            schedules: Optional[TwoTimescaleSchedule] = None, delta: float = 0.1,
                            snapshot_stride: int = 100, initial_actions: Optional[Sequence[int]] = None,
                            q_init: Optional[np.ndarray] = None, perturbations: Optional[np.ndarray] = None,
                            target: Optional[MixedProfile] = None, shared_coin: bool = True) -> ModelFreeRecord:
    """
    双时间尺度 agg-FP。

    每步：执行 A_k 得到 R_k；更新 (A^i_k, rank σ(A^{-i}_k)) 处的 Q 格；
    k=0 时 μ̂、γ̂ 取点质量，否则按 α_k 更新；掷一次共享硬币，探索则所有智能体均匀出招，
    否则 A^i_{k+1} = argmax_a Σ_x μ̂^i_k(x)·Q̂^i_{k+1}(a, x)。
    shared_coin=False 时每个智能体各掷一枚硬币，只有掷中的智能体均匀出招。
    """
    _check_game(game)
    schedules = schedules or TwoTimescaleSchedule()
    exploration = ExplorationConfig(delta, shared_coin)
    ctx = _RunContext(game, steps, seed, snapshot_stride, initial_actions, perturbations, target, True)
    dims = ctx.dims
    qtable = QTable(dims.num_agents, dims.num_actions, dims.num_counts, q_init)
    expected = game.expected_succinct()
    state = BeliefState(dims, schedules.alpha)
    rng = ctx.streams.exploration

    for k in range(steps):
        profile = ctx.profile
        ctx.actions[k] = profile
        ranks = opponent_ranks(profile, dims)
        rewards = ctx.rewards(k, ranks)
        for i in range(dims.num_agents):
            qtable.update(i, profile[i], ranks[i], rewards[i], schedules.beta)
        state.observe(profile, k)
        if k % snapshot_stride == 0:
            ctx.snapshot(k, state.empirical, q_error(qtable, game, "aggregate", expected))
        explored = explore(rng, dims, exploration)
        nxt = np.empty(dims.num_agents, dtype=np.int64)
        for i in range(dims.num_agents):
            if explored is not None and explored[i] >= 0:
                nxt[i] = explored[i]
            else:
                nxt[i] = best_response(qtable.values[i] @ state.aggregate[i], tol=TIE_TOL)
        ctx.profile = nxt

    logger.debug(f"aggfp2t 运行完成: seed={seed}, K={steps}, 末尾 Q 误差={ctx.q_err[-1]:.4f}")
    return ModelFreeRecord("aggfp2t", seed, ctx.actions, ctx.snap_steps, ctx.empirical, ctx.ne, ctx.q_err, qtable)


def _opponent_weights(beliefs: np.ndarray, agent: int) -> np.ndarray:
    """对手组合的乘积概率，按智能体顺序展开（与 np.ravel_multi_index 的 C 顺序一致）。"""
    weights = np.ones(1)
    for j, row in enumerate(beliefs):
        if j != agent:
            weights = np.multiply.outer(weights, row).ravel()
    return weights


def _opponent_columns(profile: np.ndarray, dims: GameDims) -> np.ndarray:
    shape = (dims.num_actions,) * (dims.num_agents - 1)
    return np.array([np.ravel_multi_index(tuple(np.delete(profile, i)), shape)
                     for i in range(dims.num_agents)], dtype=np.int64)


def run_two_timescale_fp(game: RandomPayoffGame, steps: int, seed: int,
                         schedules: Optional[TwoTimescaleSchedule] = None, delta: float = 0.1,
                         snapshot_stride: int = 100, initial_actions: Optional[Sequence[int]] = None,
                         perturbations: Optional[np.ndarray] = None,
                         target: Optional[MixedProfile] = None, shared_coin: bool = True) -> ModelFreeRecord:
    """
    双时间尺度 FP 基线：Q 表按 (a^i, a^{-i}) 索引，共 n^(N-1) 列；
    信念为个体信念 π̂^j，动作为 argmax_a Σ_{a^{-i}} Π_j π̂^j(a^j)·Q̂(a, a^{-i})。
    """
    _check_game(game)
    dims = game.dims
    if dims.num_agents > MAX_ENUMERATION_AGENTS:
        raise CapacityError(f"双时间尺度 FP 需要枚举 {dims.num_actions}^{dims.num_agents - 1} 个对手组合，"
                            f"智能体数上限为 {MAX_ENUMERATION_AGENTS}，实际 {dims.num_agents}")
    schedules = schedules or TwoTimescaleSchedule()
    exploration = ExplorationConfig(delta, shared_coin)
    ctx = _RunContext(game, steps, seed, snapshot_stride, initial_actions, perturbations, target, True)
    columns = dims.num_actions ** (dims.num_agents - 1)
    qtable = QTable(dims.num_agents, dims.num_actions, columns)
    expected = game.expected_full()
    state = BeliefState(dims, schedules.alpha)
    rng = ctx.streams.exploration

    for k in range(steps):
        profile = ctx.profile
        ctx.actions[k] = profile
        rewards = ctx.rewards(k, opponent_ranks(profile, dims))
        cols = _opponent_columns(profile, dims)
        for i in range(dims.num_agents):
            qtable.update(i, profile[i], cols[i], rewards[i], schedules.beta)
        state.observe(profile, k)
        if k % snapshot_stride == 0:
            ctx.snapshot(k, state.empirical, q_error(qtable, game, "full", expected))
        explored = explore(rng, dims, exploration)
        nxt = np.empty(dims.num_agents, dtype=np.int64)
        for i in range(dims.num_agents):
            if explored is not None and explored[i] >= 0:
                nxt[i] = explored[i]
            else:
                nxt[i] = best_response(qtable.values[i] @ _opponent_weights(state.individual, i), tol=TIE_TOL)
        ctx.profile = nxt

    logger.debug(f"fp2t 运行完成: seed={seed}, K={steps}, 末尾 Q 误差={ctx.q_err[-1]:.4f}")
    return ModelFreeRecord("fp2t", seed, ctx.actions, ctx.snap_steps, ctx.empirical, ctx.ne, ctx.q_err, qtable)


def boltzmann(values: np.ndarray, temperature: float) -> np.ndarray:
    """softmax(Q / temperature)，先减去最大值保证数值稳定。"""
    if temperature <= 0:
        raise ValueError(f"温度必须为正: {temperature}")
    z = (values - values.max()) / temperature
    w = np.exp(z)
    return w / w.sum()


def run_individual_q(game: RandomPayoffGame, steps: int, seed: int,
                     schedules: Optional[TwoTimescaleSchedule] = None, temperature: float = 0.1,
                     snapshot_stride: int = 100, initial_actions: Optional[Sequence[int]] = None,
                     perturbations: Optional[np.ndarray] = None,
                     target: Optional[MixedProfile] = None) -> ModelFreeRecord:
    """
    个体 Q 学习基线：每个智能体只估计自身动作的 Q（按动作访问次数取 β），
    以 Boltzmann 分布 softmax(Q/温度) 出招；γ̂ 仍按 α_k 记录经验频率。
    """
    _check_game(game)
    if temperature <= 0:
        raise ValueError(f"温度必须为正: {temperature}")
    schedules = schedules or TwoTimescaleSchedule()
    ctx = _RunContext(game, steps, seed, snapshot_stride, initial_actions, perturbations, target, False)
    dims = ctx.dims
    qtable = QTable(dims.num_agents, dims.num_actions, 1)
    state = BeliefState(dims, schedules.alpha)
    rng = ctx.streams.exploration

    for k in range(steps):
        profile = ctx.profile
        ctx.actions[k] = profile
        rewards = ctx.rewards(k, opponent_ranks(profile, dims))
        for i in range(dims.num_agents):
            qtable.update(i, profile[i], 0, rewards[i], schedules.beta)
        state.observe(profile, k)
        ctx.snapshot(k, state.empirical)
        draws = rng.random(dims.num_agents)
        nxt = np.empty(dims.num_agents, dtype=np.int64)
        for i in range(dims.num_agents):
            cdf = np.cumsum(boltzmann(qtable.values[i, :, 0], temperature))
            nxt[i] = min(int(np.searchsorted(cdf, draws[i] * cdf[-1], side="right")), dims.num_actions - 1)
        ctx.profile = nxt

    logger.debug(f"indq 运行完成: seed={seed}, K={steps}")
    return ModelFreeRecord("indq", seed, ctx.actions, ctx.snap_steps, ctx.empirical, ctx.ne, None, qtable)


def run_model_free(algorithm: str, game: RandomPayoffGame, steps: int, seed: int,
                   schedules: Optional[TwoTimescaleSchedule] = None, delta: float = 0.1,
                   temperature: Optional[float] = None, snapshot_stride: int = 100,
                   initial_actions: Optional[Sequence[int]] = None,
                   shared_coin: bool = True) -> ModelFreeRecord:
    """按算法标签分派；三种算法共用同一种子派生的扰动序列。shared_coin 对个体 Q 学习无效。"""
    if algorithm == "aggfp2t":
        return run_two_timescale_aggfp(game, steps, seed, schedules, delta, snapshot_stride, initial_actions,
                                       shared_coin=shared_coin)
    if algorithm == "fp2t":
        return run_two_timescale_fp(game, steps, seed, schedules, delta, snapshot_stride, initial_actions,
                                    shared_coin=shared_coin)
    if algorithm == "indq":
        temp = delta if temperature is None else temperature
        return run_individual_q(game, steps, seed, schedules, temp, snapshot_stride, initial_actions)
    raise ValueError(f"未知算法: {algorithm}，可选 {ALGORITHMS}")

