"""
Logging configuration for ShapeSeeker
"""

import logging
import logging.config
import os
from typing import Dict, Mapping, Optional

from app.config import settings


def build_logging_config(log_dir: str, level: str = "INFO") -> Dict:
    """Build the dictConfig document for a log directory"""
    return {
        'version': 1,
        'disable_existing_loggers': False,
        'formatters': {
            'default': {
                'format': '[%(asctime)s] %(levelname)s in %(module)s: %(message)s',
            },
            'training': {
                'format': '[%(asctime)s] TRAIN %(levelname)s: %(message)s',
            }
        },
        'handlers': {
            'default': {
                'formatter': 'default',
                'class': 'logging.StreamHandler',
                'stream': 'ext://sys.stdout',
            },
            'file': {
                'formatter': 'default',
                'class': 'logging.handlers.RotatingFileHandler',
                'filename': os.path.join(log_dir, 'shapeseeker.log'),
                'maxBytes': 10485760,  # 10MB
                'backupCount': 5,
            },
            'training_file': {
                'formatter': 'training',
                'class': 'logging.handlers.RotatingFileHandler',
                'filename': os.path.join(log_dir, 'training.log'),
                'maxBytes': 10485760,  # 10MB
                'backupCount': 10,
            }
        },
        'loggers': {
            '': {
                'level': level,
                'handlers': ['default', 'file'],
            },
            'training': {
                'level': level,
                'handlers': ['training_file', 'default'],
                'propagate': False,
            }
        }
    }


LOGGING_CONFIG = build_logging_config(settings.LOG_DIR, settings.LOG_LEVEL)


def setup_logging(log_dir: Optional[str] = None, level: Optional[str] = None) -> None:
    """Configure console, file and training logging"""
    log_dir = log_dir or settings.LOG_DIR
    os.makedirs(log_dir, exist_ok=True)
    config = LOGGING_CONFIG
    if log_dir != settings.LOG_DIR or level is not None:
        config = build_logging_config(log_dir, (level or settings.LOG_LEVEL).upper())
    logging.config.dictConfig(config)

    training_logger = logging.getLogger("training")
    training_logger.debug("Training logging initialized in %s", log_dir)


def format_losses(values: Mapping[str, float]) -> str:
    """Render a loss dictionary as a compact single log line"""
    return " ".join(f"{name}={value:.5g}" for name, value in values.items())
