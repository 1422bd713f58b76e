import uvicorn
import os
import logging
from dotenv import load_dotenv

# Load environment variables from .env file
load_dotenv()

from fdialab.logging_config import setup_logging

# Configure logging
setup_logging()
logger = logging.getLogger(__name__)

from fdialab.app_factory import create_app

app = create_app()

if __name__ == "__main__":
    # Get port from environment variable or use default
    port = int(os.environ.get("PORT", 8001))

    logger.info(f"Starting fdialab API on port {port}")

    uvicorn.run(
        "fdialab.main:app",
        host="0.0.0.0",
        port=port,
        reload=False,
    )
