"""
通用工具函数集合。

包含：
    - 日志记录器初始化。
    - 概率向量（单纯形）校验。
    - CSV / 清单中使用的数值格式化。
"""
import logging
import os
from typing import Sequence

import numpy as np

LOGGER_NAME = "AggFP"

# 单纯形容差：输入在此范围内视为合法，之后原样使用（不重新归一化）
SIMPLEX_TOL = 1e-9


def get_app_dir() -> str:
    """获取应用程序的「可写数据」根目录（日志等持久性文件），即项目根目录。"""
    return os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))


def setup_logger(name: str = LOGGER_NAME, log_file: str = "aggfp.log", level: str = "INFO") -> logging.Logger:
    """
    创建（或复用）带文件与控制台输出的日志记录器。

    Args:
        name: 记录器名称。
        log_file: 日志文件路径，相对路径按项目根目录解析。
        level: 控制台日志级别（INFO/DEBUG/...）。

    Returns:
        logging.Logger: 已配置好的记录器。
    """
    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG)

    # 避免重复添加 handler
    if logger.handlers:
        return logger

    # 文件处理器，完整持久化日志
    if not os.path.isabs(log_file):
        log_file = os.path.join(get_app_dir(), log_file)
    file_handler = logging.FileHandler(log_file, encoding='utf-8')
    file_handler.setLevel(logging.DEBUG)

    # 控制台处理器，输出到终端
    console_handler = logging.StreamHandler()
    console_handler.setLevel(getattr(logging, level.upper()))

    # 统一格式：时间-名称-级别-内容
    formatter = logging.Formatter(
        '%(asctime)s - %(name)s - %(levelname)s - %(message)s',
        datefmt='%Y-%m-%d %H:%M:%S'
    )
    file_handler.setFormatter(formatter)
    console_handler.setFormatter(formatter)

    logger.addHandler(file_handler)
    logger.addHandler(console_handler)

    return logger


def check_simplex(vec: Sequence[float], name: str = "概率向量", tol: float = SIMPLEX_TOL) -> np.ndarray:
    """
    校验向量位于概率单纯形上（非负、和为 1），容差 tol。

    返回 float64 数组；不做重新归一化，越界直接抛出 ValueError。
    """
    arr = np.asarray(vec, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValueError(f"{name} 必须是非空一维向量，实际形状 {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"{name} 含有非有限值: {arr}")
    if arr.min() < -tol:
        raise ValueError(f"{name} 存在负分量: min={arr.min():.3e}")
    total = float(arr.sum())
    if abs(total - 1.0) > tol:
        raise ValueError(f"{name} 之和偏离 1: sum={total!r}")
    return arr


def simplex_drift(vec: np.ndarray) -> float:
    """返回向量偏离单纯形的程度：max(|sum-1|, 最负分量的绝对值)。"""
    arr = np.asarray(vec, dtype=np.float64)
    return float(max(np.abs(arr.sum(axis=-1) - 1.0).max(), max(0.0, -arr.min())))


def format_number(value: float) -> str:
    """按 12 位有效数字格式化数值（CSV 与清单统一使用）。"""
    return f"{float(value):.12g}"
