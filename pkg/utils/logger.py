"""Logging utility module for rwre-lab.

This module provides centralized logging configuration with:
- Colored console output (always enabled)
- Optional file logging with rotation
- Experiment run tracking utilities
"""

import logging
import sys
import uuid
from contextlib import contextmanager
from datetime import datetime
from logging.handlers import RotatingFileHandler
from pathlib import Path
from typing import Dict, Optional

# Try to import colorlog for colored console output
try:
    import colorlog
    HAS_COLORLOG = True
except ImportError:
    HAS_COLORLOG = False


class RunTracker:
    """Utility class for tracking and logging experiment runs."""

    def __init__(self, logger: logging.Logger):
        self.logger = logger
        self.active_runs: Dict[str, dict] = {}

    def start_run(self, experiment: str, run_id: Optional[str] = None) -> str:
        """Start tracking a new experiment run.

        Args:
            experiment: Experiment name
            run_id: Optional run ID, will generate UUID if not provided

        Returns:
            Run ID
        """
        if run_id is None:
            run_id = str(uuid.uuid4())[:8]

        self.active_runs[run_id] = {
            'experiment': experiment,
            'start_time': datetime.now(),
            'replicas_done': 0,
            'rows_written': 0,
        }

        self.logger.info(f"Run started: {run_id} | Experiment: {experiment}")
        return run_id

    def log_replicas(self, run_id: str, count: int):
        """Record completed replicas for a run."""
        if run_id in self.active_runs:
            self.active_runs[run_id]['replicas_done'] += count
            self.logger.debug(
                f"Run [{run_id}] replicas done: {self.active_runs[run_id]['replicas_done']}"
            )

    def log_rows(self, run_id: str, filename: str, rows: int):
        """Record a result file written by a run."""
        if run_id in self.active_runs:
            self.active_runs[run_id]['rows_written'] += rows
            self.logger.info(f"Run [{run_id}] wrote {filename} ({rows} rows)")

    def elapsed(self, run_id: str) -> float:
        """Seconds since the run started."""
        if run_id not in self.active_runs:
            return 0.0
        return (datetime.now() - self.active_runs[run_id]['start_time']).total_seconds()

    def end_run(self, run_id: str, normal: bool = True):
        """End tracking an experiment run.

        Args:
            run_id: Run ID
            normal: Whether the run ended normally
        """
        if run_id in self.active_runs:
            run_info = self.active_runs[run_id]
            duration = (datetime.now() - run_info['start_time']).total_seconds()

            status = "completed" if normal else "abnormally terminated"
            self.logger.info(
                f"Run {status}: {run_id} | "
                f"Experiment: {run_info['experiment']} | "
                f"Duration: {duration:.2f}s | "
                f"Replicas: {run_info['replicas_done']} | "
                f"Rows: {run_info['rows_written']}"
            )

            del self.active_runs[run_id]

    @contextmanager
    def run_context(self, experiment: str, run_id: Optional[str] = None):
        """Context manager for experiment run logging.

        Args:
            experiment: Experiment name
            run_id: Optional run ID

        Yields:
            Run ID
        """
        rid = self.start_run(experiment, run_id)
        try:
            yield rid
            self.end_run(rid, normal=True)
        except Exception as e:
            self.logger.error(f"Run error [{rid}]: {e}", exc_info=True)
            self.end_run(rid, normal=False)
            raise


def setup_logging(log_level: int, enable_file: bool = False, log_file: str = "logs/rwre.log"):
    """Setup application logging with console and optional file handlers.

    Args:
        log_level: Python logging level constant (e.g., logging.INFO)
        enable_file: Whether to enable file logging
        log_file: Path to log file (only used if enable_file is True)
    """
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    root_logger.handlers.clear()

    log_format = '%(asctime)s - %(name)s - %(levelname)s - %(funcName)s:%(lineno)d - %(message)s'
    date_format = '%Y-%m-%d %H:%M:%S'

    if HAS_COLORLOG:
        console_formatter = colorlog.ColoredFormatter(
            '%(log_color)s' + log_format,
            datefmt=date_format,
            log_colors={
                'DEBUG': 'cyan',
                'INFO': 'green',
                'WARNING': 'yellow',
                'ERROR': 'red',
                'CRITICAL': 'red,bg_white',
            }
        )
    else:
        console_formatter = logging.Formatter(log_format, datefmt=date_format)

    # stderr keeps stdout free for command output
    console_handler = logging.StreamHandler(sys.stderr)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(console_formatter)
    root_logger.addHandler(console_handler)

    if enable_file:
        log_path = Path(log_file)
        log_path.parent.mkdir(parents=True, exist_ok=True)

        file_formatter = logging.Formatter(log_format, datefmt=date_format)
        file_handler = RotatingFileHandler(
            log_file,
            maxBytes=10 * 1024 * 1024,  # 10MB
            backupCount=5,
            encoding='utf-8'
        )
        file_handler.setLevel(log_level)
        file_handler.setFormatter(file_formatter)
        root_logger.addHandler(file_handler)

        root_logger.info(f"File logging enabled: {log_file}")
    else:
        root_logger.debug("File logging disabled (console only)")

    root_logger.debug(f"Logging initialized at level: {logging.getLevelName(log_level)}")


def get_logger(name: str) -> logging.Logger:
    """Get a logger instance for a module.

    Args:
        name: Logger name (typically __name__)

    Returns:
        Logger instance
    """
    return logging.getLogger(name)


def get_run_tracker(logger: logging.Logger) -> RunTracker:
    """Get an experiment run tracker instance.

    Args:
        logger: Base logger instance

    Returns:
        Run tracker
    """
    return RunTracker(logger)
