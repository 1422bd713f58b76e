"""
自定义异常类

所有实验与数值异常都继承自 FdiaLabException，便于统一处理和日志记录。
CLI 与 HTTP 层通过 to_dict() 输出机器可读的错误信息。
"""

from typing import Any, Dict, Optional


class FdiaLabException(Exception):
    """fdialab 基础异常类"""

    def __init__(self, message: str, error_code: str = "UNKNOWN", details: Optional[Dict[str, Any]] = None):
        """
        Args:
            message: 人类可读的错误消息
            error_code: 错误代码（用于日志和机器识别）
            details: 额外的技术细节（迭代次数、残差、步号等）
        """
        self.message = message
        self.error_code = error_code
        self.details = details or {}
        super().__init__(self.message)

    def to_dict(self) -> Dict[str, Any]:
        return {
            "error_code": self.error_code,
            "message": self.message,
            "details": {k: _jsonable(v) for k, v in self.details.items()},
        }


def _jsonable(value: Any) -> Any:
    if isinstance(value, (str, int, bool)) or value is None:
        return value
    try:
        return float(value)
    except (TypeError, ValueError):
        return str(value)


class ConfigurationError(FdiaLabException):
    """配置错误"""

    def __init__(self, message: str, error_code: str = "CONFIG_ERROR", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code=error_code, details=details)


class UnknownConfigKeyError(ConfigurationError):
    """场景文件中出现未知字段"""

    def __init__(self, keys, path: Optional[str] = None):
        keys = sorted(keys)
        message = f"Unknown configuration key(s): {', '.join(keys)}"
        if path:
            message = f"{message} in {path}"
        super().__init__(message, error_code="UNKNOWN_CONFIG_KEY", details={"keys": ",".join(keys), "path": path})
        self.keys = keys


class DomainError(FdiaLabException):
    """参数超出数学定义域"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code="DOMAIN_ERROR", details=details)


class NumericalError(FdiaLabException):
    """数值计算失败"""

    def __init__(self, message: str, error_code: str = "NUMERICAL_ERROR", details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code=error_code, details=details)


class ConvergenceError(NumericalError):
    """迭代求解未收敛"""

    def __init__(self, message: str, iterations: int, residual: float, details: Optional[Dict[str, Any]] = None):
        merged = {"iterations": iterations, "residual": residual}
        merged.update(details or {})
        super().__init__(
            f"{message} (iterations: {iterations}, residual: {residual:.3e})",
            error_code="CONVERGENCE_ERROR",
            details=merged,
        )
        self.iterations = iterations
        self.residual = residual


class FactorizationError(NumericalError):
    """矩阵分解失败（非正定或奇异）"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code="FACTORIZATION_ERROR", details=details)


class QcqpError(NumericalError):
    """QCQP 求解失败"""

    def __init__(self, message: str, details: Optional[Dict[str, Any]] = None):
        super().__init__(message, error_code="QCQP_ERROR", details=details)


class SensitivityError(NumericalError):
    """中心差分灵敏度出现非有限值"""

    def __init__(self, message: str, column: int, details: Optional[Dict[str, Any]] = None):
        merged = {"column": column}
        merged.update(details or {})
        super().__init__(f"{message} (column: {column})", error_code="SENSITIVITY_ERROR", details=merged)
        self.column = column


class EpisodeError(FdiaLabException):
    """仿真回合中的失败，携带步号"""

    def __init__(self, message: str, step: int, cause: Optional[FdiaLabException] = None):
        details = {"step": step}
        if cause is not None:
            details["cause"] = cause.error_code
            details.update(cause.details)
        super().__init__(f"{message} (step: {step})", error_code="EPISODE_ERROR", details=details)
        self.step = step
        self.cause = cause


class ExportError(FdiaLabException):
    """CSV 导出或读取失败"""

    def __init__(self, message: str, path: str):
        super().__init__(f"{message}: {path}", error_code="EXPORT_ERROR", details={"path": path})
        self.path = path
