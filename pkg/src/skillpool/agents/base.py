from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Protocol

from ..core import Instance, Skill
from ..execution import ExecError
from ..table import ResultTable
from ..trajectory import Trajectory


@dataclass(frozen=True)
class Budgets:
    max_turns: int = 12
    max_sql_execs: int = 20
    max_completion_tokens: int = 64000
    temperature: float = 0.2

    def __post_init__(self) -> None:
        for name in ("max_turns", "max_sql_execs", "max_completion_tokens"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.temperature < 0:
            raise ValueError("temperature must be non-negative")


@dataclass
class RunResult:
    """Outcome of one agent run. ``trajectory`` is always present."""

    sql: Optional[str]
    trajectory: Trajectory
    result: Optional[ResultTable] = None
    error: Optional[ExecError] = None
    status: str = "submitted"
    log: list[dict] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return self.result is not None and self.error is None

    def error_summary(self) -> str:
        if self.error is not None:
            return self.error.summary()
        if self.sql is None:
            return f"{self.status}: no SQL produced"
        return ""


class Executor(Protocol):
    def run(self, skill: Skill, instance: Instance, budgets: Optional[Budgets] = None) -> RunResult: ...
