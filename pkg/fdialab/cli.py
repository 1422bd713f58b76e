#!/usr/bin/env python3
"""
fdialab 命令行入口

子命令：
- run           单次仿真（可导出轨迹与指标 CSV）
- calibrate     打印 tau、z_x、tau'
- bench-attack  攻击步耗时与 Richardson 诊断
- compare       U / PO / D 三模式对比
- validate      统计与数值校验

失败时在 stderr 输出一行 JSON 错误，退出码 2（配置错误）或 1（其他）。
"""

import argparse
import json
import logging
import sys
from typing import List, Optional

import numpy as np
from dotenv import load_dotenv

from fdialab.exceptions import ConfigurationError, FactorizationError, FdiaLabException
from fdialab.logging_config import setup_logging
from fdialab.models.scenario import Mode
from fdialab.services.experiment_service import ExperimentService
from fdialab.services.scenario_service import ScenarioService

logger = logging.getLogger(__name__)

REPORT_COLUMNS = (
    ("mode", "mode"),
    ("seed", "seed"),
    ("devmax_nominal", "devmax(p̄)"),
    ("devrms_nominal", "devRMS(p̄)"),
    ("devmax_attack", "devmax(p̄ᴬ)"),
    ("devrms_attack", "devRMS(p̄ᴬ)"),
    ("mean_effort", "mean‖u‖"),
    ("alarm_count", "alarms"),
    ("f_min", "f_min"),
)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="fdialab", description="Robot FDIA attack/defence co-simulation lab")
    sub = parser.add_subparsers(dest="command", required=True)

    def scenario_args(p: argparse.ArgumentParser):
        p.add_argument("--config", help="场景 JSON 文件（默认 fdialab/config/scenario.json）")
        p.add_argument("--mode", choices=[m.value for m in Mode], help="u / po / d")
        p.add_argument("--seed", type=int, help="随机种子")

    run = sub.add_parser("run", help="运行单次仿真")
    scenario_args(run)
    run.add_argument("--out", help="输出目录（轨迹与指标 CSV）")

    cal = sub.add_parser("calibrate", help="打印检测阈值与攻击预算")
    scenario_args(cal)

    bench = sub.add_parser("bench-attack", help="攻击步计时")
    scenario_args(bench)
    bench.add_argument("--steps", type=int, default=100, help="计时的攻击步数")

    cmp_ = sub.add_parser("compare", help="三模式对比")
    scenario_args(cmp_)
    cmp_.add_argument("--seeds", type=int, nargs="+", default=[0, 1, 2], help="种子列表")
    cmp_.add_argument("--out", help="输出目录")
    cmp_.add_argument("--workers", type=int, default=1, help="并行线程数")

    val = sub.add_parser("validate", help="统计与数值校验")
    scenario_args(val)
    val.add_argument("--quick", action="store_true", help="样本量缩小 10 倍")
    return parser


def _print_reports(reports) -> None:
    print("  ".join(f"{title:>12}" for _, title in REPORT_COLUMNS))
    for report in reports:
        cells = []
        for name, _ in REPORT_COLUMNS:
            value = getattr(report, name)
            if isinstance(value, Mode):
                cells.append(f"{value.value:>12}")
            elif isinstance(value, float):
                cells.append(f"{value:>12.6f}")
            else:
                cells.append(f"{value:>12}")
        print("  ".join(cells))


def dispatch(args: argparse.Namespace) -> int:
    cfg = ScenarioService.derive(ScenarioService.load(args.config), mode=args.mode, seed=args.seed)

    if args.command == "run":
        _, report = ExperimentService.run(cfg, out_dir=args.out)
        _print_reports([report])
    elif args.command == "calibrate":
        report = ExperimentService.calibrate(cfg)
        print(json.dumps(report.model_dump(), indent=2))
    elif args.command == "bench-attack":
        report = ExperimentService.bench_attack(cfg, steps=args.steps)
        print(json.dumps(report.model_dump(), indent=2))
    elif args.command == "compare":
        reports = ExperimentService.compare(cfg, args.seeds, out_dir=args.out, max_workers=args.workers)
        _print_reports(reports)
    elif args.command == "validate":
        from fdialab.services.validation_service import run_all

        results = run_all(cfg, seed=cfg.seed, quick=args.quick)
        for r in results:
            print(f"{'✅' if r.passed else '❌'} {r.name:<28} statistic={r.statistic:.4e}  bound={r.bound:.4e}")
        return 0 if all(r.passed for r in results) else 1
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    load_dotenv()
    setup_logging()
    args = build_parser().parse_args(argv)
    try:
        return dispatch(args)
    except FdiaLabException as e:
        return _report_error(e)
    except np.linalg.LinAlgError as e:
        return _report_error(FactorizationError(f"Linear algebra failure: {e}"))


def _report_error(e: FdiaLabException) -> int:
    logger.error(f"❌ {e.error_code}: {e.message}")
    print(json.dumps(e.to_dict()), file=sys.stderr)
    return 2 if isinstance(e, ConfigurationError) else 1


if __name__ == "__main__":
    sys.exit(main())
