import logging

from app.config import settings

logging.basicConfig(
    level=getattr(logging, settings.log_level.upper(), logging.INFO),
    format="%(asctime)s %(levelname)s %(name)s: %(message)s",
)
logger = logging.getLogger(__name__)


def set_level(level: str):
    logging.getLogger().setLevel(getattr(logging, level.upper(), logging.INFO))
