"""
连续时间最优反应动态。

职责：
    - δ-贪心最优反应（BR）动态的向量场：π̇^i = (1−δ)e_{BR^i} + δ/n·1 − π^i。
    - 聚合最优反应（agg-BR）动态：μ̇^i 作用于 𝕏 上的单纯形，γ̇^i 作用于动作单纯形。
    - 一致初始化（γ_0 = π_0，μ^i_0 = π_0^{-i} 诱导的聚合分布）。
    - 显式前向欧拉积分与两种动态逐步对照的等价性检查。

向量场在最优反应切换面上不连续，采用与离散动态相同的最小下标平局规则，
不做 Filippov 滑模处理。步长 h ≤ 1 时欧拉步是凸组合，单纯形保持不变。
"""
import logging
import math
from dataclasses import dataclass, replace
from typing import Callable, List, Optional, Sequence

import numpy as np

from core.game import (
    TIE_TOL,
    Game,
    GameDims,
    MixedProfile,
    SuccinctReward,
    aggregate_distribution,
    best_response,
    get_count_index,
)

logger = logging.getLogger("AggFP")

DEFAULT_STEP = 1e-3
DEFAULT_STRIDE = 100


class NumericalError(ArithmeticError):
    """积分过程中出现非有限导数。"""

    def __init__(self, t: float, message: str):
        self.t = t
        super().__init__(f"t={t:.6g}: {message}")


@dataclass(frozen=True, eq=False)
class ContinuousState:
    """连续动态状态；不参与的分量为 None（BR 只用 pi，agg-BR 只用 mu/gamma）。"""
    t: float = 0.0
    pi: Optional[np.ndarray] = None
    mu: Optional[np.ndarray] = None
    gamma: Optional[np.ndarray] = None

    def fields(self):
        return {name: getattr(self, name) for name in ("pi", "mu", "gamma") if getattr(self, name) is not None}


def br_targets(pi: np.ndarray, game: Game) -> np.ndarray:
    """每个智能体对 π^{-i} 的最优反应动作。"""
    return np.array([best_response(game.expected_rewards(i, pi), tol=TIE_TOL) for i in range(game.dims.num_agents)],
                    dtype=np.int64)


def br_field(state: ContinuousState, game: Game, delta: float) -> ContinuousState:
    """BR 动态的导数 π̇。"""
    pi = state.pi
    dims = game.dims
    target = np.full_like(pi, delta / dims.num_actions)
    target[np.arange(dims.num_agents), br_targets(pi, game)] += 1.0 - delta
    return ContinuousState(t=state.t, pi=target - pi)


def aggbr_targets(mu: np.ndarray, succinct: Sequence[SuccinctReward]) -> np.ndarray:
    """每个智能体对聚合信念 μ^i 的最优反应动作。"""
    return np.array([best_response(s.table @ m, tol=TIE_TOL) for s, m in zip(succinct, mu)], dtype=np.int64)


def aggbr_field(state: ContinuousState, succinct: Sequence[SuccinctReward], dims: GameDims,
                delta: float) -> ContinuousState:
    """agg-BR 动态的导数 (μ̇, γ̇)。"""
    mu, gamma = state.mu, state.gamma
    rows = np.arange(dims.num_agents)
    actions = aggbr_targets(mu, succinct)
    index = get_count_index(dims)
    counts = np.bincount(actions, minlength=dims.num_actions)
    ranks = np.empty(dims.num_agents, dtype=np.int64)
    for i, a in enumerate(actions):
        counts[a] -= 1
        ranks[i] = index.lookup[tuple(counts.tolist())]
        counts[a] += 1
    mu_target = np.full_like(mu, delta / dims.num_counts)
    mu_target[rows, ranks] += 1.0 - delta
    gamma_target = np.full_like(gamma, delta / dims.num_actions)
    gamma_target[rows, actions] += 1.0 - delta
    return ContinuousState(t=state.t, mu=mu_target - mu, gamma=gamma_target - gamma)


def consistent_init(pi0: MixedProfile, dims: GameDims) -> ContinuousState:
    """γ_0 = π_0，μ^i_0 = π_0^{-i} 下 σ(A^{-i}) 的分布。"""
    pi = pi0.probs
    if pi.shape != (dims.num_agents, dims.num_actions):
        raise ValueError(f"初始策略形状应为 {(dims.num_agents, dims.num_actions)}，实际 {pi.shape}")
    mu = np.stack([aggregate_distribution(np.delete(pi, i, axis=0)) for i in range(dims.num_agents)])
    return ContinuousState(t=0.0, pi=pi.copy(), mu=mu, gamma=pi.copy())


@dataclass
class ContinuousTrajectory:
    """按步长间隔采样的轨迹。"""
    times: np.ndarray
    states: List[ContinuousState]

    @property
    def final(self) -> ContinuousState:
        return self.states[-1]


Field = Callable[[ContinuousState], ContinuousState]


def euler_integrate(field: Field, state0: ContinuousState, step: float = DEFAULT_STEP,
                    horizon: float = 10.0, stride: int = DEFAULT_STRIDE,
                    monitor: Optional[Callable[[ContinuousState], None]] = None) -> ContinuousTrajectory:
    """
    前向欧拉：state ← state + h·field(state)。

    每 stride 步采样一次，末状态总会被记录；monitor 在每个积分点（含起点与终点）调用。
    """
    if step <= 0:
        raise ValueError(f"积分步长必须为正: {step}")
    if horizon < step:
        raise ValueError(f"积分区间 T 必须不小于步长 h: T={horizon}, h={step}")
    if stride < 1:
        raise ValueError(f"采样间隔必须 ≥1: {stride}")
    num_steps = int(math.ceil(horizon / step - 1e-9))
    t0 = state0.t
    state = state0
    times, samples = [t0], [state0]
    if monitor is not None:
        monitor(state)
    for s in range(1, num_steps + 1):
        deriv = field(state).fields()
        for name, value in deriv.items():
            if not np.all(np.isfinite(value)):
                raise NumericalError(state.t, f"分量 {name} 的导数非有限")
        updated = {name: arr + step * deriv[name] for name, arr in state.fields().items()}
        state = replace(state, t=t0 + s * step, **updated)
        if monitor is not None:
            monitor(state)
        if s % stride == 0 or s == num_steps:
            times.append(state.t)
            samples.append(state)
    return ContinuousTrajectory(np.array(times), samples)


def coupled_field(game: Game, delta: float,
                  succinct: Optional[Sequence[SuccinctReward]] = None) -> Field:
    """把 BR（pi）与 agg-BR（mu, gamma）放在同一状态中并行积分。"""
    succinct = succinct or [game.succinct(i) for i in range(game.dims.num_agents)]

    def field(state: ContinuousState) -> ContinuousState:
        br = br_field(state, game, delta)
        agg = aggbr_field(state, succinct, game.dims, delta)
        return ContinuousState(t=state.t, pi=br.pi, mu=agg.mu, gamma=agg.gamma)

    return field


@dataclass
class Lemma4Report:
    """两种连续动态逐步对照的最大偏差。"""
    reward_gap: float
    strategy_gap: float
    steps: int


def check_lemma4(game: Game, pi0: MixedProfile, delta: float, step: float = DEFAULT_STEP,
                 horizon: float = 10.0) -> Lemma4Report:
    """
    一致初始化下并行积分 BR 与 agg-BR，返回
    max_{t,i,a} |R^i(a, π^{-i}_t) − R̄^i(a, μ^i_t)| 与 max_{t,i} ‖π^i_t − γ^i_t‖_∞。
    """
    dims = game.dims
    succinct = [game.succinct(i) for i in range(dims.num_agents)]
    worst = {"reward": 0.0, "strategy": 0.0, "steps": 0}

    def monitor(state: ContinuousState):
        for i in range(dims.num_agents):
            ind = game.expected_rewards(i, state.pi)
            agg = succinct[i].table @ state.mu[i]
            worst["reward"] = max(worst["reward"], float(np.abs(ind - agg).max()))
        worst["strategy"] = max(worst["strategy"], float(np.abs(state.pi - state.gamma).max()))
        worst["steps"] += 1

    euler_integrate(coupled_field(game, delta, succinct), consistent_init(pi0, dims), step, horizon,
                    stride=DEFAULT_STRIDE, monitor=monitor)
    logger.debug(f"连续动态对照完成: reward_gap={worst['reward']:.3e}, strategy_gap={worst['strategy']:.3e}")
    return Lemma4Report(worst["reward"], worst["strategy"], worst["steps"] - 1)


def lyapunov_value(game: Game, pi: np.ndarray) -> float:
    """V(π) = Σ_i max_a R^i(a, π^{-i})；零和多矩阵博弈中 V ≥ 0，且仅在纳什均衡处为 0。"""
    return float(sum(game.expected_rewards(i, pi).max() for i in range(game.dims.num_agents)))


def lyapunov_probe(trajectory: ContinuousTrajectory, game: Game, atol: float = 1e-12):
    """沿 BR 轨迹采样点计算 V，返回 (V 序列, 非增采样比例)；只做报告，不作断言。"""
    values = np.array([lyapunov_value(game, s.pi) for s in trajectory.states])
    if values.size < 2:
        return values, 1.0
    nonincreasing = float(np.mean(np.diff(values) <= atol))
    return values, nonincreasing
