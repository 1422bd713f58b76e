# 路由层 - 包含所有 API 路由

from fdialab.routers.health import router as health_router
from fdialab.routers.experiments import router as experiments_router

__all__ = [
    'health_router',
    'experiments_router',
]
