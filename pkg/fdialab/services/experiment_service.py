"""
实验业务逻辑层
"""

import logging
import time
from pathlib import Path
from typing import List, Optional, Sequence, Tuple

import numpy as np

from fdialab.attacker import AttackDiagnostics
from fdialab.controller import jury_stable, lqr_gains
from fdialab.metrics import compute_metrics, export_csv
from fdialab.models.report import BenchReport, CalibrationReport, MetricReport
from fdialab.models.scenario import Mode, ScenarioConfig
from fdialab.services.scenario_service import ScenarioService
from fdialab.simulation import EpisodeTrace, build_system, run_batch, run_episode

logger = logging.getLogger(__name__)

COMPARE_MODES = (Mode.UNDEFENDED, Mode.PASSIVE_ONLY, Mode.DEFENDED)


class ExperimentService:
    """
    实验服务

    负责：
    - 标定检测阈值、攻击预算与增益律
    - 运行单次仿真并计算指标
    - 三模式对比（逐种子导出轨迹与汇总报告）
    - 攻击步耗时基准
    """

    @staticmethod
    def calibrate(cfg: ScenarioConfig) -> CalibrationReport:
        system = build_system(cfg)
        Kp, Kd = lqr_gains(cfg.Ts, cfg.lqr_w_pos, cfg.lqr_w_vel, cfg.lqr_w_u)
        model = system.model
        rho = float(np.max(np.abs(np.linalg.eigvals(model.A - system.kf.L @ model.C))))
        report = CalibrationReport(
            alpha=cfg.false_alarm_rate,
            tau=system.tau,
            tau_prime=system.tau / cfg.attack_len if cfg.has_attack else None,
            z_x=system.law.z_x,
            z_scale=system.law.z_scale,
            Kp=Kp,
            Kd=Kd,
            # the Jury conditions are tightest at f = 1
            jury_stable=jury_stable(Kp, Kd, cfg.Ts, 1.0),
            kf_spectral_radius=rho,
        )
        logger.info(f"✅ 标定完成: tau={report.tau:.6f}, z_x={report.z_x:.6f}, tau'={report.tau_prime}")
        return report

    @staticmethod
    def run(cfg: ScenarioConfig, out_dir: Optional[str] = None) -> Tuple[EpisodeTrace, MetricReport]:
        trace = run_episode(cfg)
        report = compute_metrics(trace)
        if out_dir:
            mode = Mode(cfg.mode).value
            export_csv(trace, Path(out_dir) / f"trace_{mode}_seed{cfg.seed}.csv")
            export_csv(report, Path(out_dir) / f"report_{mode}_seed{cfg.seed}.csv")
        return trace, report

    @staticmethod
    def compare(
        cfg: ScenarioConfig,
        seeds: Sequence[int],
        out_dir: Optional[str] = None,
        max_workers: int = 1,
    ) -> List[MetricReport]:
        """
        对每个种子运行 U / PO / D 三种模式

        Returns:
            按 (seed, mode) 顺序排列的 MetricReport 列表
        """
        cfgs = [ScenarioService.derive(cfg, mode=mode, seed=seed) for seed in seeds for mode in COMPARE_MODES]
        logger.info(f"📦 对比实验: {len(seeds)} 个种子 × {len(COMPARE_MODES)} 种模式")
        traces = run_batch(cfgs, max_workers=max_workers)
        reports = [compute_metrics(trace) for trace in traces]
        if out_dir:
            out = Path(out_dir)
            for trace in traces:
                export_csv(trace, out / f"trace_{trace.mode.value}_seed{trace.seed}.csv")
            export_csv(reports, out / "compare_report.csv")
        return reports

    @staticmethod
    def bench_attack(cfg: ScenarioConfig, steps: int = 100) -> BenchReport:
        """攻击步计时：仅运行到攻击窗口内第 steps 步"""
        steps = max(2, min(steps, cfg.attack_len) if cfg.has_attack else steps)
        cfg = ScenarioService.derive(cfg, overrides={"episode_len": cfg.attack_start + steps, "attack_len": steps, "W": min(cfg.W, steps)})

        diagnostics: List[AttackDiagnostics] = []
        started = time.perf_counter()
        run_episode(cfg, collect_diagnostics=diagnostics)
        elapsed = time.perf_counter() - started

        qcqp = np.array([d.timings.get("qcqp", 0.0) for d in diagnostics])
        sens = np.array([d.timings.get("sensitivity", 0.0) for d in diagnostics])
        total = qcqp + sens
        ratios = [d.richardson_ratio for d in diagnostics if np.isfinite(d.richardson_ratio)]
        report = BenchReport(
            steps=len(diagnostics),
            mean_step_seconds=float(np.mean(total)) if total.size else 0.0,
            max_step_seconds=float(np.max(total)) if total.size else 0.0,
            mean_qcqp_seconds=float(np.mean(qcqp)) if qcqp.size else 0.0,
            mean_sensitivity_seconds=float(np.mean(sens)) if sens.size else 0.0,
            richardson_ratios=ratios,
            active_fraction=float(np.mean([d.active for d in diagnostics])) if diagnostics else 0.0,
            fallback_count=sum(d.fallback for d in diagnostics),
        )
        logger.info(f"✅ 攻击基准: {report.steps} 步, 平均 {report.mean_step_seconds * 1e3:.2f} ms/步, 总计 {elapsed:.2f}s")
        return report
