"""
Configuración centralizada de logging
"""

import logging
import sys
from datetime import datetime
from pathlib import Path
from typing import Optional

_MARCA = "_matchkit"


def setup_logging(
    log_dir: Optional[Path] = Path("logs"), level: str = "INFO", experiment: str = "matchkit"
):
    """Configurar logging para el proyecto (idempotente: no duplica handlers)"""

    nivel = getattr(logging, str(level).upper(), None)
    if not isinstance(nivel, int):
        raise ValueError(f"Nivel de log desconocido: {level}")

    # Formato de log
    formatter = logging.Formatter(
        "%(asctime)s - %(name)s - %(levelname)s - %(message)s",
        datefmt="%Y-%m-%d %H:%M:%S",
    )

    # Logger root
    logger = logging.getLogger()
    logger.setLevel(nivel)
    for handler in [h for h in logger.handlers if getattr(h, _MARCA, False)]:
        logger.removeHandler(handler)
        handler.close()

    handlers = []

    # Handler para archivo
    if log_dir is not None:
        log_dir = Path(log_dir)
        log_dir.mkdir(parents=True, exist_ok=True)
        log_file = log_dir / f"{experiment}_{datetime.now():%Y%m%d}.log"
        handlers.append(logging.FileHandler(log_file, encoding="utf-8"))

    # Handler para consola en stderr
    handlers.append(logging.StreamHandler(sys.stderr))

    # Añadir handlers
    for handler in handlers:
        handler.setFormatter(formatter)
        setattr(handler, _MARCA, True)
        logger.addHandler(handler)

    return logger
