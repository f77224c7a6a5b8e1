"""
实验编排。

职责：
    - 构造内置 rps4 随机收益博弈与内联配置博弈。
    - 按 (算法, 种子) 运行模拟，输出 CSV 序列与实验清单，并登记到运行记录库。
    - 随机实例上的等价性检查（离散 FP/agg-FP 与连续 BR/agg-BR）。
"""
import csv
import itertools
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import Any, Dict, Iterable, List, Optional, Sequence, Tuple

import numpy as np

from config.config_manager import ExperimentConfig, format_config
from core.continuous_dynamics import DEFAULT_STEP, check_lemma4
from core.discrete_dynamics import (
    ExplorationConfig,
    StepSizeSchedule,
    reward_gap,
    run_repeated_play,
)
from core.game import (
    AnonymousPolymatrixGame,
    GameDims,
    MixedProfile,
    aggregate_distribution,
    expected_reward_aggregate,
    is_zero_sum,
)
from core.model_free import (
    PayoffPerturbation,
    RandomPayoffGame,
    TwoTimescaleSchedule,
    ne_distance,
    run_model_free,
)
from core.rng import RandomStreams
from utils.db_manager import DBManager
from utils.utils import format_number

logger = logging.getLogger("AggFP")

RPS_MATRIX = ((0.0, -1.0, 1.0), (1.0, 0.0, -1.0), (-1.0, 1.0, 0.0))
RPS_PERTURBATION_SUPPORT = (-4.0, -2.0, 0.0, 2.0, 4.0)
RPS_PERTURBATION_PROBS = (0.1, 0.2, 0.4, 0.2, 0.1)

MANIFEST_NAME = "manifest.txt"
REGISTRY_NAME = "runs.db"
EQUIVALENCE_TOL = 1e-9


# ---------------- 博弈构造 ----------------
def build_rps4() -> RandomPayoffGame:
    """4 个智能体两两进行石头剪刀布，每个智能体的收益叠加独立扰动。"""
    dims = GameDims(4, 3)
    pert = PayoffPerturbation(np.array(RPS_PERTURBATION_SUPPORT), np.array(RPS_PERTURBATION_PROBS))
    return RandomPayoffGame(AnonymousPolymatrixGame.uniform(dims, RPS_MATRIX), (pert,) * dims.num_agents)


def build_game(config: ExperimentConfig) -> RandomPayoffGame:
    """按配置构造博弈；内联博弈未给出扰动时使用零扰动。"""
    if config.game == "rps4":
        game = build_rps4()
        if config.perturbation_support is None:
            return game
        base = game.base
    else:
        dims = GameDims(config.num_agents, config.num_actions)
        base = AnonymousPolymatrixGame.uniform(dims, config.pairwise)
    if config.perturbation_support is None:
        pert = PayoffPerturbation.zero()
    else:
        pert = PayoffPerturbation(np.array(config.perturbation_support), np.array(config.perturbation_probs))
    return RandomPayoffGame(base, (pert,) * base.dims.num_agents)


def game_info(game: RandomPayoffGame) -> Dict[str, Any]:
    """博弈规模与基本性质，供 `game info` 打印。"""
    dims = game.dims
    return {
        "num_agents": dims.num_agents,
        "num_actions": dims.num_actions,
        "num_counts": dims.num_counts,
        "succinct_entries": dims.num_agents * dims.num_actions * dims.num_counts,
        "full_entries": dims.num_agents * dims.full_size,
        "zero_sum": is_zero_sum(game.base),
        "perturbation_mean": [float(m) for m in game.means()],
        "reward_bound": game.reward_bound(),
    }


# ---------------- CSV 输出 ----------------
def emit_csv(series: Iterable[Tuple[int, float]], path: str) -> int:
    """
    写出 "x,y" 两列 CSV（y 保留 12 位有效数字），返回数据行数。

    序列为空时抛出 ValueError，且不创建文件。
    """
    rows = [(int(x), float(y)) for x, y in series]
    if not rows:
        raise ValueError(f"序列为空，拒绝写出: {path}")
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.writer(f, lineterminator="\n")
        writer.writerow(("x", "y"))
        for x, y in rows:
            writer.writerow((x, format_number(y)))
    return len(rows)


@dataclass
class RunResult:
    """单个 (算法, 种子) 的指标序列。"""
    algorithm: str
    seed: int
    snapshot_steps: np.ndarray
    empirical: np.ndarray
    ne_distance: np.ndarray
    q_error: Optional[np.ndarray] = None
    elapsed: float = 0.0

    @property
    def final_ne_distance(self) -> float:
        return float(self.ne_distance[-1])

    @property
    def final_q_error(self) -> Optional[float]:
        return None if self.q_error is None else float(self.q_error[-1])


def run_single(config: ExperimentConfig, game: RandomPayoffGame, algorithm: str, seed: int) -> RunResult:
    """运行一次模拟；fp/aggfp 在基础博弈上运行（已知收益），其余为模型无关算法。"""
    start = time.perf_counter()
    target = MixedProfile.uniform(game.dims)
    if algorithm in ("fp", "aggfp"):
        record = run_repeated_play(
            algorithm, game.base, config.steps, seed,
            schedule=StepSizeSchedule(config.alpha_exponent),
            exploration=ExplorationConfig(config.delta, config.shared_coin),
            snapshot_stride=config.snapshot_stride,
            initial_actions=config.initial_actions,
        )
        ne = np.array([ne_distance(g, target) for g in record.empirical])
        result = RunResult(algorithm, seed, record.snapshot_steps, record.empirical, ne)
    else:
        record = run_model_free(
            algorithm, game, config.steps, seed,
            schedules=TwoTimescaleSchedule.from_exponents(config.alpha_exponent, config.beta_exponent),
            delta=config.delta,
            temperature=config.temperature,
            snapshot_stride=config.snapshot_stride,
            initial_actions=config.initial_actions,
            shared_coin=config.shared_coin,
        )
        result = RunResult(algorithm, seed, record.snapshot_steps, record.empirical,
                           record.ne_distance, record.q_error)
    result.elapsed = time.perf_counter() - start
    logger.info(f"{algorithm} seed={seed} 完成，用时 {result.elapsed:.1f}s，"
                f"末尾 NE 距离 {result.final_ne_distance:.4f}")
    return result


def write_run_outputs(result: RunResult, out_dir: str) -> List[Tuple[str, int]]:
    """写出一次运行的全部 CSV，返回 (相对路径, 行数) 列表。"""
    prefix = f"{result.algorithm}_seed{result.seed}"
    steps = result.snapshot_steps
    written = []
    _, num_agents, num_actions = result.empirical.shape
    for i in range(num_agents):
        for a in range(num_actions):
            name = f"{prefix}_freq_agent{i}_action{a}.csv"
            written.append((name, emit_csv(zip(steps, result.empirical[:, i, a]), os.path.join(out_dir, name))))
    name = f"{prefix}_ne_distance.csv"
    written.append((name, emit_csv(zip(steps, result.ne_distance), os.path.join(out_dir, name))))
    if result.q_error is not None:
        name = f"{prefix}_q_error.csv"
        written.append((name, emit_csv(zip(steps, result.q_error), os.path.join(out_dir, name))))
    return written


def write_manifest(config: ExperimentConfig, files: Sequence[Tuple[str, int]], path: str) -> None:
    """清单：[config] 段为配置回显（可直接作为配置文件再次运行），[files] 段列出文件与行数。"""
    with open(path, "w", newline="", encoding="utf-8") as f:
        f.write(f"# experiment: {config.name}\n")
        f.write("[config]\n")
        f.write(format_config(config))
        f.write("[files]\n")
        for name, rows in files:
            f.write(f"{name} = {rows}\n")


@dataclass
class ExperimentResult:
    manifest_path: str
    files: List[Tuple[str, int]]
    runs: List[RunResult]


def run_experiment(config: ExperimentConfig, record_runs: bool = True) -> ExperimentResult:
    """
    运行配置中的全部 (算法, 种子) 组合。

    各组合写各自的文件，可并行执行；清单在全部完成后按配置顺序一次写出。
    输出目录不可写时抛出 OSError。
    """
    out_dir = config.out_dir
    os.makedirs(out_dir, exist_ok=True)
    game = build_game(config)
    pairs = [(algo, seed) for algo in config.algorithms for seed in config.seeds]
    logger.info(f"实验 {config.name} 开始: {len(pairs)} 个运行，K={config.steps}，并行数 {config.workers}")

    def job(pair):
        result = run_single(config, game, *pair)
        return result, write_run_outputs(result, out_dir)

    with ThreadPoolExecutor(max_workers=config.workers) as pool:
        outcomes = list(pool.map(job, pairs))

    files = [entry for _, written in outcomes for entry in written]
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    write_manifest(config, files, manifest_path)
    runs = [result for result, _ in outcomes]

    if record_runs:
        registry = DBManager(os.path.join(out_dir, REGISTRY_NAME))
        for result in runs:
            registry.upsert_run({
                "experiment": config.name,
                "algorithm": result.algorithm,
                "seed": result.seed,
                "steps": config.steps,
                "delta": config.delta,
                "final_ne_distance": result.final_ne_distance,
                "final_q_error": result.final_q_error,
                "manifest_path": manifest_path,
            })
    logger.info(f"实验 {config.name} 完成: {len(files)} 个 CSV，清单 {manifest_path}")
    return ExperimentResult(manifest_path, files, runs)


# ---------------- 等价性检查 ----------------
def enumerated_expected_rewards(game: AnonymousPolymatrixGame, agent: int, beliefs: np.ndarray) -> np.ndarray:
    """穷举全部对手组合计算 R^i(·, π^{-i})，作为独立的参照实现。"""
    dims = game.dims
    opponents = [j for j in range(dims.num_agents) if j != agent]
    values = np.zeros(dims.num_actions)
    profile = np.zeros(dims.num_agents, dtype=np.int64)
    for combo in itertools.product(range(dims.num_actions), repeat=len(opponents)):
        prob = 1.0
        for j, b in zip(opponents, combo):
            prob *= beliefs[j, b]
            profile[j] = b
        if prob == 0.0:
            continue
        for a in range(dims.num_actions):
            profile[agent] = a
            values[a] += prob * game.reward(agent, profile)
    return values


def first_mismatch(actions_a: np.ndarray, actions_b: np.ndarray) -> Optional[int]:
    """两条动作序列首个不一致的步；完全一致时返回 None。"""
    diff = np.flatnonzero((actions_a != actions_b).any(axis=1))
    return int(diff[0]) if diff.size else None


def _random_dims(rng: np.random.Generator, max_agents: int, max_actions: int) -> GameDims:
    return GameDims(int(rng.integers(2, max_agents + 1)), int(rng.integers(2, max_actions + 1)))


@dataclass
class EquivalenceReport:
    """离散等价性检查结果；失败以条目形式记录，不抛异常。"""
    instances: int
    steps: int
    deltas: Tuple[float, ...]
    expected_reward_gap: float = 0.0
    pathwise_reward_gap: float = 0.0
    mismatches: List[Tuple[int, float, int]] = field(default_factory=list)
    control_mismatch: Optional[int] = None

    @property
    def passed(self) -> bool:
        return (self.expected_reward_gap <= EQUIVALENCE_TOL
                and self.pathwise_reward_gap <= EQUIVALENCE_TOL
                and not self.mismatches
                and self.control_mismatch is not None)

    def summary_lines(self) -> List[str]:
        lines = [
            f"instances = {self.instances}",
            f"steps = {self.steps}",
            f"deltas = {', '.join(format_number(d) for d in self.deltas)}",
            f"max expected reward gap = {self.expected_reward_gap:.3e}",
            f"max pathwise reward gap = {self.pathwise_reward_gap:.3e}",
            f"trajectory mismatches = {len(self.mismatches)}",
        ]
        for inst, delta, k in self.mismatches:
            lines.append(f"  instance {inst} delta {format_number(delta)}: first mismatch at step {k}")
        control = "not detected" if self.control_mismatch is None else f"detected at step {self.control_mismatch}"
        lines.append(f"negative control (mismatched tie-break) = {control}")
        lines.append(f"result = {'PASS' if self.passed else 'FAIL'}")
        return lines


def negative_control(steps: int = 50, seed: int = 0) -> Optional[int]:
    """全零收益博弈上，agg-FP 改用最大下标平局规则，应检测到轨迹分歧。"""
    dims = GameDims(3, 2)
    game = AnonymousPolymatrixGame.uniform(dims, np.zeros((2, 2)))
    fp = run_repeated_play("fp", game, steps, seed)
    agg = run_repeated_play("aggfp", game, steps, seed, tie_break="largest")
    return first_mismatch(fp.actions, agg.actions)


def equivalence_suite(instances: int = 100, steps: int = 1000, max_agents: int = 5, max_actions: int = 3,
                      deltas: Sequence[float] = (0.0, 0.1), seed: int = 0) -> EquivalenceReport:
    """
    随机匿名多矩阵博弈（元素均匀取自 [−1,1]）上的等价性检查：
    混合策略下两种期望收益的穷举对照、耦合 FP/agg-FP 的逐步收益差与动作轨迹一致性。
    """
    if instances < 1 or steps < 1:
        raise ValueError(f"实例数与步数必须 ≥1: instances={instances}, steps={steps}")
    if max_agents < 2 or max_actions < 2:
        raise ValueError(f"规模上限过小: max_agents={max_agents}, max_actions={max_actions}")
    rng = RandomStreams(seed).instances
    report = EquivalenceReport(instances, steps, tuple(float(d) for d in deltas))
    for inst in range(instances):
        dims = _random_dims(rng, max_agents, max_actions)
        game = AnonymousPolymatrixGame.random(dims, rng)
        succinct = [game.succinct(i) for i in range(dims.num_agents)]
        beliefs = rng.dirichlet(np.ones(dims.num_actions), size=dims.num_agents)
        for i in range(dims.num_agents):
            brute = enumerated_expected_rewards(game, i, beliefs)
            agg = expected_reward_aggregate(succinct[i], aggregate_distribution(np.delete(beliefs, i, axis=0)))
            report.expected_reward_gap = max(report.expected_reward_gap, float(np.abs(brute - agg).max()))

        run_seed = int(rng.integers(2 ** 31))
        for delta in report.deltas:
            exploration = ExplorationConfig(delta)

            def observer(k, state):
                gap = reward_gap(game, state, succinct)
                report.pathwise_reward_gap = max(report.pathwise_reward_gap, gap)

            fp = run_repeated_play("fp", game, steps, run_seed, exploration=exploration, observer=observer)
            agg = run_repeated_play("aggfp", game, steps, run_seed, exploration=exploration)
            k = first_mismatch(fp.actions, agg.actions)
            if k is not None:
                logger.warning(f"实例 {inst} (N={dims.num_agents}, n={dims.num_actions}, δ={delta}) 轨迹在第 {k} 步分歧")
                report.mismatches.append((inst, delta, k))

    report.control_mismatch = negative_control(seed=seed)
    logger.info(f"等价性检查完成: {instances} 个实例，{'通过' if report.passed else '未通过'}")
    return report


@dataclass
class ContinuousReport:
    instances: int
    horizon: float
    step: float
    reward_gap: float = 0.0
    strategy_gap: float = 0.0

    @property
    def passed(self) -> bool:
        return self.reward_gap <= EQUIVALENCE_TOL and self.strategy_gap <= EQUIVALENCE_TOL

    def summary_lines(self) -> List[str]:
        return [
            f"instances = {self.instances}",
            f"horizon = {format_number(self.horizon)}",
            f"step = {format_number(self.step)}",
            f"max reward gap = {self.reward_gap:.3e}",
            f"max strategy gap = {self.strategy_gap:.3e}",
            f"result = {'PASS' if self.passed else 'FAIL'}",
        ]


def continuous_suite(instances: int = 20, horizon: float = 10.0, step: float = DEFAULT_STEP,
                     max_agents: int = 5, max_actions: int = 3, delta: float = 0.1,
                     seed: int = 0) -> ContinuousReport:
    """一致初始化下并行积分 BR 与 agg-BR，汇总各实例的最大偏差。"""
    if instances < 1:
        raise ValueError(f"实例数必须 ≥1: {instances}")
    rng = RandomStreams(seed).instances
    report = ContinuousReport(instances, horizon, step)
    for inst in range(instances):
        dims = _random_dims(rng, max_agents, max_actions)
        game = AnonymousPolymatrixGame.random(dims, rng)
        pi0 = MixedProfile(rng.dirichlet(np.ones(dims.num_actions), size=dims.num_agents))
        result = check_lemma4(game, pi0, delta, step, horizon)
        report.reward_gap = max(report.reward_gap, result.reward_gap)
        report.strategy_gap = max(report.strategy_gap, result.strategy_gap)
    logger.info(f"连续动态检查完成: {instances} 个实例，{'通过' if report.passed else '未通过'}")
    return report
