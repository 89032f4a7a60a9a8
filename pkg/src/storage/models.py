from __future__ import annotations

from dataclasses import dataclass
from datetime import datetime
from enum import Enum
from typing import Optional


class RunStatus(str, Enum):
    OK = "OK"
    CONFIG_ERROR = "CONFIG_ERROR"
    NUMERICAL_ERROR = "NUMERICAL_ERROR"

    @property
    def exit_code(self) -> int:
        return {RunStatus.OK: 0, RunStatus.CONFIG_ERROR: 1, RunStatus.NUMERICAL_ERROR: 2}[self]


@dataclass(frozen=True)
class RunRecord:
    ts: datetime
    command: str
    config_hash: str
    seed: int
    status: RunStatus
    version: str
    output: Optional[str] = None
    cause: Optional[str] = None


@dataclass(frozen=True)
class MetricRow:
    run_id: int
    name: str
    value: float
