"""
本地 SQLite 运行记录。

职责：
- 登记每次 (实验, 算法, 种子) 运行的末尾指标与清单位置。
- 提供线程安全的写入与查询接口，供命令行 `runs list` 读取。
"""
import os
import sqlite3
import threading
from typing import Any, Dict, List, Optional

_lock = threading.Lock()

_RUN_FIELDS = (
    "experiment", "algorithm", "seed", "steps", "delta",
    "final_ne_distance", "final_q_error", "manifest_path",
)


class DBManager:
    """SQLite 管理器，封装运行记录的读写。"""

    def __init__(self, db_path: Optional[str] = None):
        if db_path is None:
            from utils.utils import get_app_dir
            base_dir = os.path.join(get_app_dir(), "data")
            os.makedirs(base_dir, exist_ok=True)
            db_path = os.path.join(base_dir, "runs.db")
        self.db_path = db_path
        self._init_tables()

    def _connect(self):
        conn = sqlite3.connect(self.db_path, check_same_thread=False)
        conn.row_factory = sqlite3.Row
        # WAL 模式 + busy_timeout，允许并行写入的运行共用一个库
        conn.execute("PRAGMA journal_mode=WAL")
        conn.execute("PRAGMA busy_timeout=5000")
        return conn

    def _init_tables(self):
        with _lock:
            conn = self._connect()
            try:
                conn.execute(
                    """
                    CREATE TABLE IF NOT EXISTS runs (
                        experiment TEXT NOT NULL,
                        algorithm TEXT NOT NULL,
                        seed INTEGER NOT NULL,
                        steps INTEGER,
                        delta REAL,
                        final_ne_distance REAL,
                        final_q_error REAL,
                        manifest_path TEXT,
                        updated_at INTEGER,
                        PRIMARY KEY (experiment, algorithm, seed)
                    )
                    """
                )
                conn.commit()
            finally:
                conn.close()

    def upsert_run(self, run: Dict[str, Any]):
        """写入/更新一条运行记录；同一 (实验, 算法, 种子) 只保留最新一次。"""
        missing = [k for k in ("experiment", "algorithm", "seed") if run.get(k) is None]
        if missing:
            raise ValueError(f"运行记录缺少字段: {', '.join(missing)}")
        params = {k: run.get(k) for k in _RUN_FIELDS}
        with _lock:
            conn = self._connect()
            try:
                conn.execute(
                    """
                    INSERT INTO runs (experiment, algorithm, seed, steps, delta, final_ne_distance, final_q_error, manifest_path, updated_at)
                    VALUES (:experiment, :algorithm, :seed, :steps, :delta, :final_ne_distance, :final_q_error, :manifest_path, strftime('%s','now'))
                    ON CONFLICT(experiment, algorithm, seed) DO UPDATE SET
                        steps=excluded.steps,
                        delta=excluded.delta,
                        final_ne_distance=excluded.final_ne_distance,
                        final_q_error=excluded.final_q_error,
                        manifest_path=excluded.manifest_path,
                        updated_at=strftime('%s','now')
                    """,
                    params,
                )
                conn.commit()
            finally:
                conn.close()

    def list_runs(self, experiment: Optional[str] = None) -> List[Dict[str, Any]]:
        """按 (实验, 算法, 种子) 排序返回运行记录。"""
        sql = f"SELECT {', '.join(_RUN_FIELDS)}, updated_at FROM runs"
        args: tuple = ()
        if experiment is not None:
            sql += " WHERE experiment = ?"
            args = (experiment,)
        sql += " ORDER BY experiment, algorithm, seed"
        with _lock:
            conn = self._connect()
            try:
                return [dict(row) for row in conn.execute(sql, args).fetchall()]
            finally:
                conn.close()

    def delete_experiment(self, experiment: str) -> int:
        """删除某个实验的全部记录，返回删除条数。"""
        with _lock:
            conn = self._connect()
            try:
                cur = conn.execute("DELETE FROM runs WHERE experiment = ?", (experiment,))
                conn.commit()
                return cur.rowcount
            finally:
                conn.close()
