"""
实验路由

仿真是 CPU 密集型同步计算，路由函数用普通 def，由 FastAPI 放到线程池执行。
"""

import logging
from typing import List

from fastapi import APIRouter

from fdialab.models.report import (
    CalibrateRequest,
    CalibrationReport,
    CompareRequest,
    EpisodeRequest,
    MetricReport,
)
from fdialab.services.experiment_service import ExperimentService
from fdialab.services.scenario_service import ScenarioService

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api", tags=["Experiments"])


@router.post("/calibrate", response_model=CalibrationReport)
def calibrate(request: CalibrateRequest):
    """标定 tau、tau'、z_x、z_scale"""
    cfg = ScenarioService.derive(ScenarioService.load(), overrides=request.overrides)
    return ExperimentService.calibrate(cfg)


@router.post("/episodes", response_model=MetricReport)
def run_episode(request: EpisodeRequest):
    """
    运行单次仿真

    Returns:
        MetricReport
    """
    cfg = ScenarioService.derive(ScenarioService.load(), mode=request.mode, seed=request.seed, overrides=request.overrides)
    logger.info(f"📦 收到仿真请求: mode={cfg.mode.value}, seed={cfg.seed}")
    _, report = ExperimentService.run(cfg)
    return report


@router.post("/compare", response_model=List[MetricReport])
def compare(request: CompareRequest):
    """三模式对比"""
    cfg = ScenarioService.derive(ScenarioService.load(), overrides=request.overrides)
    return ExperimentService.compare(cfg, request.seeds, max_workers=request.max_workers)
