"""Exception hierarchy shared across the package."""
from __future__ import annotations


class SkillgateError(Exception):
    """Base class for all package-specific failures."""


class SchemaError(SkillgateError):
    """Skill schema file is syntactically or semantically invalid."""

    def __init__(self, message: str, *, line: int | None = None, column: int | None = None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}" + (f", column {column})" if column is not None else ")")
        super().__init__(message)


class IngestError(SkillgateError):
    """Input table cannot be ingested (bad columns, duplicates, unknown ids)."""


class ProtocolViolation(SkillgateError):
    """Stored cells violate the two-round annotation protocol."""


class StatsError(SkillgateError):
    """A statistic cannot be computed from the given inputs."""


class RunPaused(SkillgateError):
    """A model run stopped after repeated endpoint failures; checkpoint is intact."""

    def __init__(self, message: str, completed: int):
        self.completed = completed
        super().__init__(message)


class CheckpointMismatch(SkillgateError):
    """Resume refused: run config or skill inventory changed since the checkpoint."""


class TemplateError(SkillgateError):
    """Prompt template references a variable that is not provided."""


class WorkflowError(SkillgateError):
    """A workflow stage precondition is not met."""

    def __init__(self, message: str, *, hint: str | None = None):
        self.hint = hint
        super().__init__(message if hint is None else f"{message} Hint: {hint}")
