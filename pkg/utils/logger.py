import logging
import sys
from typing import Optional

from config.settings import settings


def setup_logging(level: Optional[str] = None, log_file: Optional[str] = None) -> logging.Logger:
    """Настройка логирования"""
    handlers = [logging.StreamHandler(sys.stdout)]

    log_file = log_file or settings.log_file
    if log_file:
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    logging.basicConfig(
        level=getattr(logging, (level or settings.log_level).upper()),
        format="%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        handlers=handlers,
        force=True,
    )

    # Приглушаем сторонние библиотеки
    for noisy in ("sklearn", "matplotlib", "numba", "shapely"):
        logging.getLogger(noisy).setLevel(logging.WARNING)

    return logging.getLogger(__name__)
