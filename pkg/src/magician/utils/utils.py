import csv
import datetime
import json
import logging
import math
import os
import sys
import uuid
from typing import Dict, Iterable, List, Optional, Union

OUTPUT_DIR = "output"


def build_file_name_session(name: str, session_id: str):
    session_dir = f"{OUTPUT_DIR}/{session_id}"
    os.makedirs(session_dir, exist_ok=True)
    return os.path.join(session_dir, f"{name}")


def to_json_file_pretty(name: str, content: Union[Dict, List]):
    def default_serializer(obj):
        if hasattr(obj, "model_dump"):
            return obj.model_dump()
        if hasattr(obj, "tolist"):
            return obj.tolist()
        raise TypeError(
            f"Object of type {obj.__class__.__name__} is not JSON serializable"
        )

    path = name if name.endswith(".json") else f"{name}.json"
    tmp = f"{path}.tmp"
    with open(tmp, "w") as outfile:
        json.dump(content, outfile, indent=2, default=default_serializer)
    os.replace(tmp, path)
    return path


def write_csv_rows(path: str, rows: Iterable[Dict], fieldnames: Optional[List[str]] = None):
    """Write dict rows to a CSV file, replacing it atomically."""
    rows = list(rows)
    if fieldnames is None:
        fieldnames = list(rows[0].keys()) if rows else []
    tmp = f"{path}.tmp"
    with open(tmp, "w", newline="") as f:
        writer = csv.DictWriter(f, fieldnames=fieldnames)
        writer.writeheader()
        writer.writerows(rows)
    os.replace(tmp, path)
    return path


def compensated_sum(values: Iterable[float]) -> float:
    """Exactly rounded sum, so aggregation does not depend on trial order."""
    return math.fsum(values)


def create_session_logger_id() -> str:
    return (
        datetime.datetime.now().strftime("%Y%m%d-%H%M%S") + "-" + uuid.uuid4().hex[:6]
    )


def setup_logging(session_id: str = None, debug: bool = False, name: str = "magician"):
    """Configure logging with session-specific log file and stdout

    Args:
        session_id: Optional session ID for log file naming. If None, generates a new one
        debug: Whether to enable debug logging
        name: Name of the logger to create/get. Defaults to 'magician'

    Returns:
        logging.Logger: Configured logger instance
    """
    if session_id is None:
        session_id = create_session_logger_id()

    log_file = build_file_name_session("session.log", session_id)

    logger = logging.getLogger(name)
    logger.setLevel(logging.DEBUG if debug else logging.INFO)

    # Clear any existing handlers to avoid duplicates
    logger.handlers.clear()

    class EmojiFormatter(logging.Formatter):
        EMOJI_MAP = {
            logging.INFO: "ℹ️",
            logging.WARNING: "⚠️",
            logging.ERROR: "❌",
            logging.CRITICAL: "🔥",
            logging.DEBUG: "🐛",
        }

        def format(self, record):
            record.emoji = self.EMOJI_MAP.get(record.levelno, "")
            return super().format(record)

    # stderr keeps stdout clean for JSON/CSV emitted by the CLI
    console = logging.StreamHandler(sys.stderr)
    console.setLevel(logging.DEBUG if debug else logging.INFO)
    console.setFormatter(EmojiFormatter("%(emoji)s %(message)s"))
    logger.addHandler(console)

    file_handler = logging.FileHandler(log_file)
    file_handler.setLevel(logging.DEBUG)  # Always log everything to file
    file_handler.setFormatter(
        logging.Formatter("%(asctime)s - %(name)s - %(levelname)s - %(message)s")
    )
    logger.addHandler(file_handler)

    if debug:
        logger.debug("🔧 Debug logging enabled")
    logger.info(f"📝 Logging to {log_file}")

    return logger
