import logging
import sys

from .cli import main
from .config import config

logging.basicConfig(
    level=getattr(logging, config.log_level.upper(), logging.INFO),
    format=config.log_format
)

sys.exit(main())
