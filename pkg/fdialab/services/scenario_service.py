"""
场景配置业务逻辑层
"""

import logging
from typing import Any, Dict, Optional

from pydantic import ValidationError

from fdialab.config import DEFAULT_SCENARIO_FILE, load_json_config
from fdialab.exceptions import ConfigurationError, UnknownConfigKeyError
from fdialab.models.scenario import Mode, ScenarioConfig

logger = logging.getLogger(__name__)


class ScenarioService:
    """
    场景服务

    负责：
    - 加载并校验场景文件（未知键报错）
    - 按 mode / seed 派生场景
    - 缓存已解析的场景文件
    """

    _scenario_cache: Dict[str, ScenarioConfig] = {}

    @staticmethod
    def parse(data: Dict[str, Any], source: Optional[str] = None) -> ScenarioConfig:
        """
        将字典转换为 ScenarioConfig，pydantic 错误统一转换为 ConfigurationError

        Args:
            data: 扁平参数字典
            source: 来源（文件路径），仅用于错误信息
        """
        unknown = sorted(set(data) - set(ScenarioConfig.model_fields))
        if unknown:
            raise UnknownConfigKeyError(unknown, source)
        try:
            return ScenarioConfig.model_validate(data)
        except ValidationError as e:
            errors = [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()]
            raise ConfigurationError(
                f"Invalid scenario configuration: {'; '.join(errors)}",
                details={"source": source or "<inline>", "errors": len(errors)},
            )

    @staticmethod
    def load(path: Optional[str] = None) -> ScenarioConfig:
        """
        加载场景文件（默认为包内 config/scenario.json）

        Returns:
            ScenarioConfig 对象
        """
        key = path or DEFAULT_SCENARIO_FILE
        if key in ScenarioService._scenario_cache:
            return ScenarioService._scenario_cache[key]

        data = load_json_config(DEFAULT_SCENARIO_FILE, path=path)
        cfg = ScenarioService.parse(data, source=key)
        ScenarioService._scenario_cache[key] = cfg
        logger.info(f"✅ 加载场景配置成功: {key}")
        return cfg

    @staticmethod
    def derive(
        cfg: ScenarioConfig,
        mode: Optional[Mode] = None,
        seed: Optional[int] = None,
        overrides: Optional[Dict[str, Any]] = None,
    ) -> ScenarioConfig:
        """在已有场景上覆盖 mode / seed / 任意字段，并重新校验"""
        changes: Dict[str, Any] = dict(overrides or {})
        if mode is not None:
            changes["mode"] = Mode(mode)
        if seed is not None:
            changes["seed"] = seed
        if not changes:
            return cfg
        unknown = sorted(set(changes) - set(ScenarioConfig.model_fields))
        if unknown:
            raise UnknownConfigKeyError(unknown)
        try:
            return cfg.with_overrides(**changes)
        except ValidationError as e:
            errors = [f"{'.'.join(str(p) for p in err['loc']) or '<root>'}: {err['msg']}" for err in e.errors()]
            raise ConfigurationError(f"Invalid scenario override: {'; '.join(errors)}", details={"errors": len(errors)})

    @staticmethod
    def clear_cache():
        ScenarioService._scenario_cache.clear()
