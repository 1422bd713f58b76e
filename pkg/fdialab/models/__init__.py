# 数据模型层 - 包含所有 Pydantic 模型

from fdialab.models.scenario import (
    Mode,
    ScenarioConfig,
)

from fdialab.models.report import (
    BenchReport,
    CalibrateRequest,
    CalibrationReport,
    CompareRequest,
    EpisodeRequest,
    MetricReport,
    ValidationResult,
)

__all__ = [
    # 场景
    'Mode',
    'ScenarioConfig',
    # 结果
    'MetricReport',
    'CalibrationReport',
    'ValidationResult',
    'BenchReport',
    # 请求
    'EpisodeRequest',
    'CompareRequest',
    'CalibrateRequest',
]
