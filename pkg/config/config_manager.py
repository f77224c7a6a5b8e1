"""
实验配置管理（纯文本 key = value 文件 + 命令行覆盖）。

职责：
    - 定义配置的默认结构（内置 rps4 实验参数）。
    - 解析配置文件并与默认值合并，保证新增字段总有默认值。
    - 应用命令行覆盖、校验并转换为不可变的 ExperimentConfig。
    - 把配置回写为 key = value 文本（清单中的配置回显可直接再次作为配置文件使用）。
"""
import math
from dataclasses import dataclass
from typing import Any, Dict, Optional, Tuple

KNOWN_ALGORITHMS = ("aggfp2t", "fp2t", "indq", "fp", "aggfp")
KNOWN_GAMES = ("rps4", "inline")

# 回显顺序固定，保证清单逐字节可复现
CONFIG_KEYS = (
    "name", "game", "num_agents", "num_actions", "pairwise",
    "perturbation_support", "perturbation_probs", "algorithms", "steps", "seeds",
    "delta", "alpha_exponent", "beta_exponent", "temperature", "snapshot_stride",
    "shared_coin", "initial_actions", "out_dir", "workers",
)


class ConfigError(ValueError):
    """配置非法；field 指明出错的字段。"""

    def __init__(self, field: str, message: str):
        self.field = field
        super().__init__(f"配置项 {field} 非法: {message}")


def get_default_config() -> Dict[str, Any]:
    """获取默认配置结构（内置 rps4：δ=0.1，α 指数 0.7，β 指数 0.6）。"""
    return {
        "name": "rps4",
        "game": "rps4",
        "num_agents": None,
        "num_actions": None,
        "pairwise": None,
        "perturbation_support": None,
        "perturbation_probs": None,
        "algorithms": ["aggfp2t", "fp2t", "indq"],
        "steps": 200000,
        "seeds": list(range(10)),
        "delta": 0.1,
        "alpha_exponent": 0.7,
        "beta_exponent": 0.6,
        "temperature": None,
        "snapshot_stride": 100,
        "shared_coin": True,
        "initial_actions": None,
        "out_dir": "results",
        "workers": 1,
    }


# ---------------- 文本解析 ----------------
def _float_list(raw: str):
    return [float(v) for v in raw.replace(",", " ").split()]


def _int_list(raw: str):
    return [int(v) for v in raw.replace(",", " ").split()]


def _seeds(raw: str):
    seeds = []
    for part in raw.split(","):
        part = part.strip()
        if not part:
            continue
        if "-" in part[1:]:
            lo, hi = part.split("-", 1)
            seeds.extend(range(int(lo), int(hi) + 1))
        else:
            seeds.append(int(part))
    return seeds


def _matrix(raw: str):
    return [_float_list(row) for row in raw.split(";") if row.strip()]


def _bool(raw: str) -> bool:
    value = raw.strip().lower()
    if value in ("1", "true", "yes", "on"):
        return True
    if value in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"无法识别的布尔值: {raw}")


def _optional_float(raw: str):
    return None if raw.strip().lower() in ("", "none") else float(raw)


_PARSERS = {
    "name": str.strip,
    "game": str.strip,
    "num_agents": int,
    "num_actions": int,
    "pairwise": _matrix,
    "perturbation_support": _float_list,
    "perturbation_probs": _float_list,
    "algorithms": lambda raw: [a.strip() for a in raw.split(",") if a.strip()],
    "steps": int,
    "seeds": _seeds,
    "delta": float,
    "alpha_exponent": float,
    "beta_exponent": float,
    "temperature": _optional_float,
    "snapshot_stride": int,
    "shared_coin": _bool,
    "initial_actions": _int_list,
    "out_dir": str.strip,
    "workers": int,
}


def parse_config_text(text: str) -> Dict[str, Any]:
    """
    解析 key = value 文本。

    支持 # 注释；出现 [section] 时只读取 [config] 段，其余段（如清单的 [files]）忽略。
    """
    parsed: Dict[str, Any] = {}
    section: Optional[str] = None
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip().lower()
            continue
        if section not in (None, "config"):
            continue
        if "=" not in line:
            raise ConfigError(f"第 {lineno} 行", f"缺少 '=': {line}")
        key, raw = (part.strip() for part in line.split("=", 1))
        if key not in _PARSERS:
            raise ConfigError(key, "未知的配置项")
        try:
            parsed[key] = _PARSERS[key](raw)
        except ValueError as e:
            raise ConfigError(key, str(e)) from e
    return parsed


def load_config(path: Optional[str] = None) -> Dict[str, Any]:
    """读取配置文件并合并到默认配置；path 为空时返回默认配置。"""
    config = get_default_config()
    if not path:
        return config
    with open(path, "r", encoding="utf-8") as f:
        config.update(parse_config_text(f.read()))
    return config


def apply_overrides(config: Dict[str, Any], overrides: Dict[str, Any]) -> Dict[str, Any]:
    """应用命令行覆盖（值为 None 的项视为未指定）。"""
    merged = dict(config)
    for key, value in overrides.items():
        if value is None:
            continue
        if key not in _PARSERS:
            raise ConfigError(key, "未知的配置项")
        merged[key] = value
    return merged


# ---------------- 校验与转换 ----------------
def validate_config(config: Dict[str, Any]) -> Tuple[bool, str]:
    """
    校验配置是否合法。

    返回 (是否合法, 错误信息)；错误信息以出错字段名开头。
    """
    try:
        to_experiment_config(config)
    except ConfigError as e:
        return False, str(e)
    return True, ""


@dataclass(frozen=True)
class ExperimentConfig:
    """一次实验的完整配置（不可变）。"""
    name: str
    game: str
    num_agents: Optional[int]
    num_actions: Optional[int]
    pairwise: Optional[Tuple[Tuple[float, ...], ...]]
    perturbation_support: Optional[Tuple[float, ...]]
    perturbation_probs: Optional[Tuple[float, ...]]
    algorithms: Tuple[str, ...]
    steps: int
    seeds: Tuple[int, ...]
    delta: float
    alpha_exponent: float
    beta_exponent: float
    temperature: Optional[float]
    snapshot_stride: int
    shared_coin: bool
    initial_actions: Optional[Tuple[int, ...]]
    out_dir: str
    workers: int


def _tuple(value, cast):
    return None if value is None else tuple(cast(v) for v in value)


def to_experiment_config(config: Dict[str, Any]) -> ExperimentConfig:
    """校验并转换为 ExperimentConfig；非法时抛出 ConfigError。"""
    cfg = dict(get_default_config())
    cfg.update(config)

    if cfg["game"] not in KNOWN_GAMES:
        raise ConfigError("game", f"未知博弈 {cfg['game']}，可选 {KNOWN_GAMES}")
    algorithms = tuple(cfg["algorithms"] or ())
    if not algorithms:
        raise ConfigError("algorithms", "至少指定一个算法")
    for algo in algorithms:
        if algo not in KNOWN_ALGORITHMS:
            raise ConfigError("algorithms", f"未知算法 {algo}，可选 {KNOWN_ALGORITHMS}")
    if int(cfg["steps"]) < 1:
        raise ConfigError("steps", f"步数必须 ≥1: {cfg['steps']}")
    if int(cfg["snapshot_stride"]) < 1:
        raise ConfigError("snapshot_stride", f"快照间隔必须 ≥1: {cfg['snapshot_stride']}")
    if not 0.0 <= float(cfg["delta"]) < 1.0:
        raise ConfigError("delta", f"探索概率必须在 [0, 1) 内: {cfg['delta']}")
    seeds = tuple(int(s) for s in (cfg["seeds"] or ()))
    if not seeds:
        raise ConfigError("seeds", "种子列表不能为空")
    if any(s < 0 for s in seeds):
        raise ConfigError("seeds", f"种子必须非负: {seeds}")
    if len(set(seeds)) != len(seeds):
        raise ConfigError("seeds", f"种子不能重复: {seeds}")
    for key in ("alpha_exponent", "beta_exponent"):
        if not 0.5 < float(cfg[key]) <= 1.0:
            raise ConfigError(key, f"步长指数必须在 (0.5, 1] 内: {cfg[key]}")
    if cfg["temperature"] is not None and float(cfg["temperature"]) <= 0:
        raise ConfigError("temperature", f"温度必须为正: {cfg['temperature']}")
    if int(cfg["workers"]) < 1:
        raise ConfigError("workers", f"并行数必须 ≥1: {cfg['workers']}")
    if not str(cfg["out_dir"]).strip():
        raise ConfigError("out_dir", "输出目录不能为空")
    # 清单回显按行解析，# 之后视为注释
    for key in ("name", "out_dir"):
        if any(ch in str(cfg[key]) for ch in "#\r\n"):
            raise ConfigError(key, f"不能包含 # 或换行: {cfg[key]!r}")

    num_agents, num_actions = cfg["num_agents"], cfg["num_actions"]
    pairwise = cfg["pairwise"]
    if cfg["game"] == "rps4":
        num_agents, num_actions, pairwise = None, None, None
    else:
        if num_agents is None or int(num_agents) < 2:
            raise ConfigError("num_agents", f"内联博弈需要 ≥2 的智能体数: {num_agents}")
        if num_actions is None or int(num_actions) < 1:
            raise ConfigError("num_actions", f"内联博弈需要 ≥1 的动作数: {num_actions}")
        if pairwise is None or len(pairwise) != int(num_actions) or any(len(r) != int(num_actions) for r in pairwise):
            raise ConfigError("pairwise", f"成对矩阵必须为 {num_actions}×{num_actions}")
        if any(not math.isfinite(v) for row in pairwise for v in row):
            raise ConfigError("pairwise", "成对矩阵存在非有限值")

    support, probs = cfg["perturbation_support"], cfg["perturbation_probs"]
    if (support is None) != (probs is None):
        raise ConfigError("perturbation_probs", "扰动支撑与概率必须同时给出")
    if support is not None:
        if len(support) != len(probs) or not support:
            raise ConfigError("perturbation_probs", "扰动支撑与概率长度不一致")
        if min(probs) < 0 or abs(sum(probs) - 1.0) > 1e-9:
            raise ConfigError("perturbation_probs", f"扰动概率必须位于单纯形上: {probs}")

    initial = cfg["initial_actions"]
    if initial is not None:
        expect_agents = 4 if cfg["game"] == "rps4" else int(num_agents)
        expect_actions = 3 if cfg["game"] == "rps4" else int(num_actions)
        if len(initial) != expect_agents or any(not 0 <= int(a) < expect_actions for a in initial):
            raise ConfigError("initial_actions", f"初始动作必须是长度 {expect_agents}、取值 [0, {expect_actions}) 的整数列表")

    return ExperimentConfig(
        name=str(cfg["name"]),
        game=cfg["game"],
        num_agents=None if num_agents is None else int(num_agents),
        num_actions=None if num_actions is None else int(num_actions),
        pairwise=None if pairwise is None else tuple(tuple(float(v) for v in row) for row in pairwise),
        perturbation_support=_tuple(support, float),
        perturbation_probs=_tuple(probs, float),
        algorithms=algorithms,
        steps=int(cfg["steps"]),
        seeds=seeds,
        delta=float(cfg["delta"]),
        alpha_exponent=float(cfg["alpha_exponent"]),
        beta_exponent=float(cfg["beta_exponent"]),
        temperature=None if cfg["temperature"] is None else float(cfg["temperature"]),
        snapshot_stride=int(cfg["snapshot_stride"]),
        shared_coin=bool(cfg["shared_coin"]),
        initial_actions=_tuple(initial, int),
        out_dir=str(cfg["out_dir"]),
        workers=int(cfg["workers"]),
    )


def _format_value(value: Any) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return repr(value)
    if isinstance(value, tuple):
        if value and isinstance(value[0], tuple):
            return "; ".join(" ".join(repr(v) for v in row) for row in value)
        return ", ".join(repr(v) if isinstance(v, float) else str(v) for v in value)
    return str(value)


def format_config(config: ExperimentConfig) -> str:
    """把配置回写为 key = value 文本；值为 None 的项省略（再次读取时取默认值）。"""
    lines = []
    for key in CONFIG_KEYS:
        value = getattr(config, key)
        if value is None:
            continue
        lines.append(f"{key} = {_format_value(value)}")
    return "\n".join(lines) + "\n"
