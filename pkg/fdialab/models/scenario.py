"""
场景配置数据模型

一个场景 = 机械臂几何 + 噪声模型 + 控制/检测/防御/攻击参数 + 运行参数。
扁平 JSON，一个键一个参数；未知键直接报错。
"""

import math
from enum import Enum
from typing import List, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from fdialab.robot import BIT_GENERATORS, DEFAULT_LINK_LENGTHS


class Mode(str, Enum):
    """运行模式"""
    UNDEFENDED = "u"
    PASSIVE_ONLY = "po"
    DEFENDED = "d"


class ScenarioConfig(BaseModel):
    """单次仿真的完整参数（单位见各字段 description）"""

    model_config = ConfigDict(extra="forbid", frozen=True, use_enum_values=False)

    # 机械臂与对象模型
    link_lengths: List[float] = Field(default_factory=lambda: list(DEFAULT_LINK_LENGTHS), description="连杆长度 [m]")
    Ts: float = Field(default=0.01, gt=0, description="采样周期 [s]")
    q_c: float = Field(default=1e-3, ge=0, description="连续时间加速度噪声强度 [rad^2/s^3]")
    r_block: float = Field(default=1e-6, gt=0, description="测量噪声方差 R = r_block·I [rad^2]")
    q0: List[float] = Field(
        default_factory=lambda: [0.0] + [math.pi / 8.0] * 5,
        description="初始关节角 [rad]；名义任务保持 fk(q0) 位姿",
    )
    p_ref: Optional[List[float]] = Field(default=None, description="名义末端位置 [m]（3 维）；为空时取 fk(q0)")

    # 任务空间控制器（LQR 权重）
    lqr_w_pos: float = Field(default=1.0, gt=0, description="LQR 位置权重")
    lqr_w_vel: float = Field(default=0.1, ge=0, description="LQR 速度权重")
    lqr_w_u: float = Field(default=0.01, gt=0, description="LQR 输入权重")
    rank_tol: float = Field(default=1e-10, ge=0, description="伪逆奇异值截断（相对）")

    # χ² 检测器
    alpha: Optional[float] = Field(default=None, gt=0, lt=1, description="每步虚警概率")
    arl: Optional[float] = Field(default=5000.0, gt=1, description="期望虚警间隔 [samples]")
    W: int = Field(default=20, ge=1, description="检测窗口长度 [samples]")

    # 主动防御
    psi: float = Field(default=0.999, gt=0, lt=1, description="z_x 的 χ²(n) 分位点")
    beta: float = Field(default=0.1, gt=0, lt=1, description="f(z_x) = beta")
    gamma: float = Field(default=8.0, gt=0, description="增益律指数")
    sync_period: int = Field(default=800, ge=1, description="预测器重同步周期 [samples]；默认让一次重同步落在攻击起点")
    defer_resync: bool = Field(default=True, description="z~ > z_x 时推迟到期的重同步")
    k_min: int = Field(default=5, ge=0, description="重同步后抑制打分的步数")
    ridge_rel: float = Field(default=1e-12, ge=0, description="Σ_rt 相对正则")

    # 攻击者
    attack_target: List[float] = Field(default_factory=lambda: [-2.0, 1.0], description="攻击目标点 [m]（平面）")
    attack_start: int = Field(default=800, ge=0, description="攻击起始步")
    attack_len: int = Field(default=1200, ge=0, description="攻击持续步数 T；0 表示无攻击")
    KpA: List[float] = Field(default_factory=lambda: [100.0, 100.0], description="攻击者 PD 比例增益（对角）[1/s^2]")
    KdA: List[float] = Field(default_factory=lambda: [20.0, 20.0], description="攻击者 PD 微分增益（对角）[1/s]")
    zeta: float = Field(default=1e-3, gt=0, description="增量正则权重")
    fd_step: float = Field(default=1e-6, gt=0, description="中心差分步长 [rad]")
    richardson_every: int = Field(default=100, ge=0, description="步长减半校验间隔 [attack steps]；0 关闭")
    attacker_knows_defence: bool = Field(default=True, description="攻击者内部仿真是否包含主动防御")

    # 运行
    episode_len: int = Field(default=2000, ge=1, description="仿真步数")
    warmup_steps: int = Field(default=0, ge=0, description="记录前的预热步数")
    seed: int = Field(default=0, ge=0, description="随机种子")
    mode: Mode = Field(default=Mode.DEFENDED, description="u / po / d")
    rng: str = Field(default="PCG64", description="numpy 位生成器")

    @field_validator("link_lengths")
    @classmethod
    def _positive_links(cls, v: List[float]) -> List[float]:
        if not v or any(length <= 0 for length in v):
            raise ValueError("link_lengths must be a nonempty list of positive lengths")
        return v

    @field_validator("attack_target", "KpA", "KdA")
    @classmethod
    def _planar(cls, v: List[float]) -> List[float]:
        if len(v) != 2:
            raise ValueError("expected 2 entries (x, y)")
        return v

    @field_validator("KpA", "KdA")
    @classmethod
    def _nonnegative_gains(cls, v: List[float]) -> List[float]:
        if any(g < 0 for g in v):
            raise ValueError("attacker gains must be nonnegative")
        return v

    @field_validator("p_ref")
    @classmethod
    def _spatial(cls, v: Optional[List[float]]) -> Optional[List[float]]:
        if v is not None and len(v) != 3:
            raise ValueError("p_ref must have 3 entries")
        return v

    @field_validator("rng")
    @classmethod
    def _known_rng(cls, v: str) -> str:
        if v not in BIT_GENERATORS:
            raise ValueError(f"rng must be one of {sorted(BIT_GENERATORS)}")
        return v

    @model_validator(mode="before")
    @classmethod
    def _one_false_alarm_knob(cls, data):
        # an explicit alpha replaces the default ARL
        if isinstance(data, dict) and data.get("alpha") is not None and "arl" not in data:
            data = {**data, "arl": None}
        return data

    @model_validator(mode="after")
    def _consistent(self) -> "ScenarioConfig":
        if (self.alpha is None) == (self.arl is None):
            raise ValueError("exactly one of alpha and arl must be set")
        if len(self.q0) != len(self.link_lengths):
            raise ValueError("q0 must have one entry per link")
        if self.attack_start + self.attack_len > self.episode_len:
            raise ValueError("attack_start + attack_len must not exceed episode_len")
        if self.attack_len > 0 and self.W > self.attack_len:
            raise ValueError("W must not exceed attack_len")
        if self.attack_len == 1:
            raise ValueError("attack_len must be 0 or at least 2")
        return self

    @property
    def dof(self) -> int:
        return len(self.link_lengths)

    @property
    def false_alarm_rate(self) -> float:
        return self.alpha if self.alpha is not None else 1.0 / self.arl

    @property
    def has_attack(self) -> bool:
        return self.attack_len > 0

    @property
    def attack_end(self) -> int:
        return self.attack_start + self.attack_len

    def with_overrides(self, **overrides) -> "ScenarioConfig":
        """带校验的副本（model_copy 不会重新校验）"""
        data = {**self.model_dump(), **overrides}
        if overrides.get("alpha") is not None and "arl" not in overrides:
            data["arl"] = None
        elif overrides.get("arl") is not None and "alpha" not in overrides:
            data["alpha"] = None
        return ScenarioConfig.model_validate(data)
