"""Append-only training metrics, one JSON object per line."""

import json
import os
from dataclasses import asdict, dataclass
from typing import Dict, List, Optional

from .core import ConfigurationError, DataError
from .grpo import BatchMetrics
from .logger import get_logger

logger = get_logger(__name__)

PHASES = ("triage", "attending-easy", "attending-medium", "attending-hard", "attending-mixed", "eval", "theory")


@dataclass(frozen=True)
class MetricsRecord:
    run_id: str
    phase: str
    step: int
    mean_reward: float
    mean_format: float
    mean_accuracy: float
    mean_entropy: float
    mean_kl: float
    grad_norm: float
    wall_ms: float

    @classmethod
    def from_batch(cls, run_id: str, phase: str, step: int, metrics: BatchMetrics, wall_ms: float) -> "MetricsRecord":
        return cls(
            run_id, phase, step, metrics.mean_reward, metrics.mean_format, metrics.mean_accuracy,
            metrics.mean_entropy, metrics.mean_kl, metrics.grad_norm, wall_ms,
        )


class MetricsLog:
    """Line-atomic metrics file; each record is a single O_APPEND write."""

    def __init__(self, path: str, run_id: str):
        self.path = path
        self.run_id = run_id
        self._last: Dict[str, int] = {}
        directory = os.path.dirname(path)
        if directory:
            os.makedirs(directory, exist_ok=True)
        self._drop_torn_tail()
        for record in self.read():
            self._last[record.phase] = max(self._last.get(record.phase, -1), record.step)

    def _drop_torn_tail(self) -> None:
        """Cut an unterminated final record so the next append starts a fresh line."""
        if not os.path.exists(self.path):
            return
        with open(self.path, "rb+") as f:
            data = f.read()
            if not data or data.endswith(b"\n"):
                return
            keep = data.rfind(b"\n") + 1
            logger.warning(f"{self.path}: dropping {len(data) - keep} bytes of unterminated record")
            f.truncate(keep)

    def next_step(self, phase: str) -> int:
        """First step number a rerun of ``phase`` should use."""
        return self._last.get(phase, -1) + 1

    def append(self, record: MetricsRecord) -> None:
        if record.phase not in PHASES:
            raise ConfigurationError(f"unknown metrics phase {record.phase!r}")
        last = self._last.get(record.phase)
        if last is not None and record.step <= last:
            raise ConfigurationError(f"metrics step {record.step} not after {last} in phase {record.phase}")
        line = (json.dumps(asdict(record), sort_keys=True) + "\n").encode("utf-8")
        fd = os.open(self.path, os.O_WRONLY | os.O_APPEND | os.O_CREAT, 0o644)
        try:
            os.write(fd, line)
        finally:
            os.close(fd)
        self._last[record.phase] = record.step

    def read(self, phase: Optional[str] = None) -> List[MetricsRecord]:
        return read_metrics(self.path, phase)


def read_metrics(path: str, phase: Optional[str] = None) -> List[MetricsRecord]:
    if not os.path.exists(path):
        return []
    records = []
    with open(path) as f:
        for number, line in enumerate(f, start=1):
            if not line.strip():
                continue
            if not line.endswith("\n"):
                logger.warning(f"{path}:{number}: ignoring unterminated record")
                continue
            try:
                record = MetricsRecord(**json.loads(line))
            except (json.JSONDecodeError, TypeError) as e:
                raise DataError(f"{path}:{number}: invalid metrics record: {e}") from e
            if phase is None or record.phase == phase:
                records.append(record)
    return records
