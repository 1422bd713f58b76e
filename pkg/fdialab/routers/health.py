"""
健康检查路由
"""

import logging
from fastapi import APIRouter

from fdialab import __version__

logger = logging.getLogger(__name__)

router = APIRouter(prefix="/api", tags=["Health"])


@router.get("/health")
async def health_check():
    """
    健康检查端点

    Returns:
        {
            "status": "healthy",
            "message": "...",
            "version": "..."
        }
    """
    return {
        "status": "healthy",
        "message": "fdialab API is running",
        "version": __version__,
    }
