"""
结果与请求数据模型
"""

from typing import Any, Dict, List, Optional

from pydantic import BaseModel, Field

from fdialab.models.scenario import Mode


class MetricReport(BaseModel):
    """单次仿真指标（偏差在攻击窗口内计算；无攻击时覆盖全程）"""
    mode: Mode
    seed: int
    steps: int = Field(..., ge=0, description="参与统计的步数")
    devmax_nominal: float = Field(..., ge=0, description="max ‖p̄ - p‖ [m]")
    devrms_nominal: float = Field(..., ge=0, description="RMS ‖p̄ - p‖ [m]")
    devmax_attack: float = Field(..., ge=0, description="max ‖p̄ᴬ - p‖ [m]")
    devrms_attack: float = Field(..., ge=0, description="RMS ‖p̄ᴬ - p‖ [m]")
    mean_effort: float = Field(..., ge=0, description="mean ‖u‖ [rad/s^2]")
    alarm_count: int = Field(..., ge=0, description="全程报警步数")
    attack_alarm_count: int = Field(..., ge=0, description="攻击窗口内报警步数")
    max_w_over_tau: float = Field(..., ge=0)
    max_z_over_tau_prime: float = Field(default=0.0, ge=0)
    f_min: float = Field(..., ge=0)
    f_mean: float = Field(..., ge=0)
    qcqp_active_fraction: float = Field(default=0.0, ge=0)
    acc_pred_rms_error: float = Field(default=0.0, ge=0, description="预测与实际末端加速度误差 RMS [m/s^2]")


class CalibrationReport(BaseModel):
    """检测器/防御/攻击预算标定结果"""
    alpha: float
    tau: float
    tau_prime: Optional[float] = None
    z_x: float
    z_scale: float
    Kp: float
    Kd: float
    jury_stable: bool
    kf_spectral_radius: float


class ValidationResult(BaseModel):
    """一项统计/数值校验的结果"""
    name: str
    passed: bool
    statistic: float
    bound: float
    details: Dict[str, Any] = Field(default_factory=dict)


class BenchReport(BaseModel):
    """攻击步耗时与 Richardson 诊断"""
    steps: int
    mean_step_seconds: float
    max_step_seconds: float
    mean_qcqp_seconds: float
    mean_sensitivity_seconds: float
    richardson_ratios: List[float] = Field(default_factory=list)
    active_fraction: float
    fallback_count: int


class EpisodeRequest(BaseModel):
    """POST /api/episodes"""
    overrides: Dict[str, Any] = Field(default_factory=dict, description="ScenarioConfig 字段覆盖")
    mode: Optional[Mode] = None
    seed: Optional[int] = Field(default=None, ge=0)


class CompareRequest(BaseModel):
    """POST /api/compare"""
    overrides: Dict[str, Any] = Field(default_factory=dict, description="ScenarioConfig 字段覆盖")
    seeds: List[int] = Field(default_factory=lambda: [0], description="随机种子列表")
    max_workers: int = Field(default=1, ge=1)


class CalibrateRequest(BaseModel):
    """POST /api/calibrate"""
    overrides: Dict[str, Any] = Field(default_factory=dict, description="ScenarioConfig 字段覆盖")
