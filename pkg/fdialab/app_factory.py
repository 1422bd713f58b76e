"""
FastAPI 应用工厂 - 初始化和配置应用程序
"""

import logging

from fastapi import FastAPI, Request
from fastapi.middleware.cors import CORSMiddleware
from fastapi.responses import JSONResponse

from fdialab import __version__
from fdialab.exceptions import ConfigurationError, FdiaLabException
from fdialab.routers import experiments_router, health_router

logger = logging.getLogger(__name__)


def create_app() -> FastAPI:
    """
    创建并配置 FastAPI 应用

    Returns:
        配置好的 FastAPI 应用实例
    """
    app = FastAPI(
        title="fdialab API",
        description="Robot false-data-injection attack and defence co-simulation lab",
        version=__version__,
    )

    app.add_middleware(
        CORSMiddleware,
        allow_origins=["*"],
        allow_credentials=True,
        allow_methods=["*"],
        allow_headers=["*"],
    )

    logger.info("📦 注册路由...")
    app.include_router(health_router)
    app.include_router(experiments_router)

    @app.exception_handler(FdiaLabException)
    async def fdialab_exception_handler(request: Request, exc: FdiaLabException):
        # 配置错误属于请求错误，其余为服务端数值失败
        status_code = 422 if isinstance(exc, ConfigurationError) else 500
        logger.error(f"❌ {request.url.path}: [{exc.error_code}] {exc.message}")
        return JSONResponse(status_code=status_code, content=exc.to_dict())

    logger.info("✅ 应用创建完成")
    return app
