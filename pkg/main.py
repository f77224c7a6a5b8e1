"""
主程序入口（命令行）。

职责：
    - 解析子命令：run / suite equivalence / suite continuous / game info / runs list / runs clear。
    - 读取配置文件并应用命令行覆盖，校验失败时给出出错字段。
    - 初始化日志，按退出码约定返回：0 成功，1 运行失败，2 用法错误。

运行方式：
    python main.py run --config rps4.conf --out results
    python main.py suite equivalence --instances 100 --steps 1000
"""
import argparse
import os
import sys

from config.config_manager import (
    KNOWN_ALGORITHMS,
    ConfigError,
    apply_overrides,
    load_config,
    to_experiment_config,
)
from core.continuous_dynamics import DEFAULT_STEP
from utils.utils import setup_logger

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_USAGE = 2


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="aggfp", description="匿名多矩阵博弈上的聚合虚拟博弈实验工具")
    parser.add_argument("--log-level", default="INFO", choices=("DEBUG", "INFO", "WARNING", "ERROR"),
                        help="控制台日志级别")
    sub = parser.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="运行实验并输出 CSV 与清单")
    run.add_argument("--config", help="key = value 配置文件（实验清单也可直接使用）")
    run.add_argument("--out", dest="out_dir", help="输出目录")
    run.add_argument("--name", help="实验名称")
    run.add_argument("--seed", type=int, help="只运行单个种子")
    run.add_argument("--steps", type=int, help="迭代步数 K")
    run.add_argument("--delta", type=float, help="探索概率 δ")
    run.add_argument("--algo", action="append", choices=KNOWN_ALGORITHMS, help="算法，可重复指定")
    run.add_argument("--snapshot-stride", type=int, help="快照间隔")
    run.add_argument("--workers", type=int, help="并行运行数")

    suite = sub.add_parser("suite", help="等价性检查")
    suite_sub = suite.add_subparsers(dest="suite", required=True)
    eq = suite_sub.add_parser("equivalence", help="离散 FP 与 agg-FP 的等价性检查")
    eq.add_argument("--instances", type=int, default=100)
    eq.add_argument("--steps", type=int, default=1000)
    eq.add_argument("--max-agents", type=int, default=5)
    eq.add_argument("--max-actions", type=int, default=3)
    eq.add_argument("--seed", type=int, default=0)
    cont = suite_sub.add_parser("continuous", help="连续 BR 与 agg-BR 的等价性检查")
    cont.add_argument("--instances", type=int, default=20)
    cont.add_argument("--horizon", type=float, default=10.0)
    cont.add_argument("--step", type=float, default=DEFAULT_STEP)
    cont.add_argument("--max-agents", type=int, default=5)
    cont.add_argument("--max-actions", type=int, default=3)
    cont.add_argument("--delta", type=float, default=0.1)
    cont.add_argument("--seed", type=int, default=0)

    game = sub.add_parser("game", help="博弈信息")
    game_sub = game.add_subparsers(dest="game_command", required=True)
    info = game_sub.add_parser("info", help="打印博弈规模与性质")
    info.add_argument("--game", default="rps4", choices=("rps4",))

    runs = sub.add_parser("runs", help="运行记录")
    runs_sub = runs.add_subparsers(dest="runs_command", required=True)
    lst = runs_sub.add_parser("list", help="列出运行记录")
    lst.add_argument("--out", dest="out_dir", required=True, help="实验输出目录")
    lst.add_argument("--experiment", help="只列出某个实验")
    clr = runs_sub.add_parser("clear", help="删除某个实验的运行记录")
    clr.add_argument("--out", dest="out_dir", required=True, help="实验输出目录")
    clr.add_argument("--experiment", required=True)
    return parser


def cmd_run(args) -> int:
    from core.experiment import run_experiment

    config = load_config(args.config)
    config = apply_overrides(config, {
        "out_dir": args.out_dir,
        "name": args.name,
        "seeds": None if args.seed is None else [args.seed],
        "steps": args.steps,
        "delta": args.delta,
        "algorithms": args.algo,
        "snapshot_stride": args.snapshot_stride,
        "workers": args.workers,
    })
    result = run_experiment(to_experiment_config(config))
    print(f"manifest = {result.manifest_path}")
    for run in result.runs:
        q = "" if run.final_q_error is None else f" q_error={run.final_q_error:.6g}"
        print(f"{run.algorithm} seed={run.seed} ne_distance={run.final_ne_distance:.6g}{q}")
    return EXIT_OK


def cmd_suite(args) -> int:
    from core.experiment import continuous_suite, equivalence_suite

    if args.suite == "equivalence":
        report = equivalence_suite(args.instances, args.steps, args.max_agents, args.max_actions, seed=args.seed)
    else:
        report = continuous_suite(args.instances, args.horizon, args.step, args.max_agents, args.max_actions,
                                  args.delta, seed=args.seed)
    print("\n".join(report.summary_lines()))
    return EXIT_OK if report.passed else EXIT_FAILURE


def cmd_game(args) -> int:
    from core.experiment import build_rps4, game_info

    for key, value in game_info(build_rps4()).items():
        print(f"{key} = {value}")
    return EXIT_OK


def cmd_runs(args) -> int:
    from utils.db_manager import DBManager

    db_path = os.path.join(args.out_dir, "runs.db")
    if not os.path.exists(db_path):
        print(f"未找到运行记录: {db_path}", file=sys.stderr)
        return EXIT_FAILURE
    db = DBManager(db_path)
    if args.runs_command == "clear":
        print(f"已删除 {db.delete_experiment(args.experiment)} 条记录")
        return EXIT_OK
    print("experiment,algorithm,seed,steps,delta,final_ne_distance,final_q_error")
    for row in db.list_runs(args.experiment):
        q = "" if row["final_q_error"] is None else f"{row['final_q_error']:.6g}"
        print(f"{row['experiment']},{row['algorithm']},{row['seed']},{row['steps']},{row['delta']},"
              f"{row['final_ne_distance']:.6g},{q}")
    return EXIT_OK


COMMANDS = {"run": cmd_run, "suite": cmd_suite, "game": cmd_game, "runs": cmd_runs}


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logger = setup_logger(level=args.log_level)
    try:
        return COMMANDS[args.command](args)
    except ConfigError as e:
        logger.error(str(e))
        return EXIT_USAGE
    except (OSError, RuntimeError, ArithmeticError) as e:
        logger.error(f"运行失败: {e}")
        return EXIT_FAILURE
    except ValueError as e:
        logger.error(f"参数非法: {e}")
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
