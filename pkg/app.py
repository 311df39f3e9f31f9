import logging
import sys

from xattack import __version__
from xattack.cli import main
from xattack.config import config

# Configure logging
logging.basicConfig(
    level=getattr(logging, config.log_level.upper(), logging.INFO),
    format=config.log_format
)
logger = logging.getLogger(__name__)

if __name__ == "__main__":
    logger.debug(f"🚀 X-Attack {__version__}")
    logger.debug(f"🌍 Environment: {config.environment}")
    sys.exit(main())
