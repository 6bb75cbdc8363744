"""
Structured CSV logging system.
Logs run events in a consistent format for later analysis.
"""
import csv
import json
import logging
import os
import sys
import threading
from datetime import datetime, timezone
from pathlib import Path
from typing import Any, Dict, Optional, Union

from src.core.types import DetectionSet

logger = logging.getLogger(__name__)

COLUMNS = ['ts', 'lvl', 'src', 'run', 'evt', 'msg', 'kv']


class StructuredLogger:
    """
    CSV-based structured logging for sensing runs.
    Format: ts, lvl, src, run, evt, msg, kv
    """

    def __init__(self, log_dir: Union[str, Path] = "logs", run_id: str = ""):
        """
        Initialize structured logger.

        Args:
            log_dir: Directory for log files
            run_id: Identifier written in the run column of every row
        """
        self.log_dir = Path(log_dir)
        self.log_dir.mkdir(parents=True, exist_ok=True)
        self.run_id = run_id

        date_str = datetime.now().strftime("%Y%m%d")
        self.log_file = self.log_dir / f"sensing_{date_str}.csv"
        self._lock = threading.Lock()

        if not self.log_file.exists():
            self._write_row(COLUMNS)

        logger.debug(f"Structured logger ready: {self.log_file}")

    def _write_row(self, row):
        try:
            with self._lock, open(self.log_file, 'a', newline='') as f:
                csv.writer(f).writerow(row)
        except OSError as e:
            # Last resort: print to stderr
            print(f"CRITICAL: Failed to write log: {e}", file=sys.stderr)

    def log(
        self,
        level: str,
        source: str,
        event: str,
        message: str,
        extra: Optional[Dict[str, Any]] = None
    ):
        """
        Log structured event immediately to CSV.

        Args:
            level: Log level (INFO, WARNING, ERROR)
            source: Source component (simulate, detect, bench, pipeline)
            event: Event type (detections, point, artifact, ...)
            message: Human-readable message
            extra: Additional key-value data (JSON encoded)
        """
        kv_json = json.dumps(extra, default=str) if extra else ''
        self._write_row([datetime.now(timezone.utc).isoformat(), level, source, self.run_id, event, message, kv_json])

    def info(self, source: str, event: str, message: str, extra: Optional[Dict] = None):
        self.log('INFO', source, event, message, extra)

    def warning(self, source: str, event: str, message: str, extra: Optional[Dict] = None):
        self.log('WARNING', source, event, message, extra)

    def error(self, source: str, event: str, message: str, extra: Optional[Dict] = None):
        self.log('ERROR', source, event, message, extra)

    def log_detection_set(self, source: str, result: DetectionSet, label: str = ""):
        """
        Log a detector result.

        Flags make the row a WARNING so truncated or stalled runs stand out.
        """
        level = 'WARNING' if result.flags else 'INFO'
        self.log(
            level=level,
            source=source,
            event='detections',
            message=f"{label + ': ' if label else ''}{len(result)} detections in {result.iterations} iterations",
            extra={
                'n_detections': len(result),
                'iterations': result.iterations,
                'flags': result.flag_names(),
                'final_residual': result.residual_trace[-1] if result.residual_trace else None,
            }
        )

    def log_experiment_point(self, scenario: str, row: Dict[str, Any]):
        """Log one aggregated (sweep point, detector) row of a study."""
        self.info(
            source='bench',
            event='point',
            message=f"{scenario} point {row.get('point')} {row.get('detector')}",
            extra=row,
        )

    def log_artifact(self, source: str, path: Union[str, Path], kind: str):
        """Log a written output file."""
        self.info(source=source, event='artifact', message=f"{kind} -> {path}", extra={'path': str(path), 'kind': kind})


def setup_logging(log_dir: Union[str, Path] = "logs", run_id: str = "") -> StructuredLogger:
    """
    Configure root logging and return a structured logger instance.

    - Sets a console handler for human-readable logs (level from LOG_LEVEL).
    - Returns StructuredLogger for CSV/event logging.
    """
    level_name = os.getenv("LOG_LEVEL", "INFO").upper()
    level = getattr(logging, level_name, logging.INFO)
    logging.basicConfig(
        level=level,
        format="%(asctime)s [%(levelname)s] %(name)s: %(message)s",
    )
    return StructuredLogger(log_dir=log_dir, run_id=run_id)
