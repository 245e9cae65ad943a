import logging
import json
import os
from datetime import datetime, timezone

from dotenv import load_dotenv

load_dotenv()


class JsonFormatter(logging.Formatter):
    """
    Formats log records as one JSON object per line so solver runs can be
    filtered and replotted from the log alone.
    """
    def format(self, record):
        log_record = {
            "timestamp": datetime.fromtimestamp(record.created, tz=timezone.utc).replace(tzinfo=None).isoformat() + "Z",
            "level": record.levelname,
            "message": record.getMessage(),
            "source": record.name
        }
        # Structured payload passed as extra={'extra_data': {...}}
        if hasattr(record, 'extra_data'):
            log_record.update(record.extra_data)
        if record.exc_info:
            log_record["exception"] = self.formatException(record.exc_info)

        return json.dumps(log_record, default=str)


def setup_logger(name='DopplerSeparation', log_file=None, level=None):
    """
    Sets up a logger that appends JSON lines to `log_file`.
    DOPPLER_LOG_FILE and DOPPLER_LOG_LEVEL override the defaults.
    """
    log_file = log_file or os.getenv("DOPPLER_LOG_FILE", "reports/separation_log.jsonl")
    level = level or os.getenv("DOPPLER_LOG_LEVEL", "INFO").upper()

    log_dir = os.path.dirname(log_file)
    if log_dir:
        os.makedirs(log_dir, exist_ok=True)

    logger = logging.getLogger(name)
    logger.setLevel(level)

    # Keep solver chatter out of the console
    logger.propagate = False

    # Re-running setup must not duplicate handlers
    if logger.hasHandlers():
        logger.handlers.clear()

    fh = logging.FileHandler(log_file, mode='a')
    fh.setLevel(level)
    fh.setFormatter(JsonFormatter())
    logger.addHandler(fh)

    return logger


# Shared logger for the whole package
logger = setup_logger()
