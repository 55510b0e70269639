"""Exception types shared across the package.

Every domain failure raised by this package derives from CheckpointerError so
callers (and the CLI) can distinguish domain errors from OS or usage errors.
"""

from __future__ import annotations


class CheckpointerError(Exception):
    """Base class for all domain errors raised by this package."""


class CycleDetected(CheckpointerError):
    """The stage graph contains a dependency cycle."""

    def __init__(self, cycle: tuple[str, ...]):
        self.cycle = tuple(cycle)
        super().__init__(f"dependency cycle: {' -> '.join(self.cycle)}")


class DanglingReference(CheckpointerError):
    """A stage lists an upstream id that no stage defines."""

    def __init__(self, stage_id: str, referenced_by: str | None = None):
        self.stage_id = stage_id
        self.referenced_by = referenced_by
        where = f" (referenced by {referenced_by!r})" if referenced_by else ""
        super().__init__(f"unknown upstream stage {stage_id!r}{where}")


class DuplicateStageId(CheckpointerError):
    def __init__(self, stage_id: str):
        self.stage_id = stage_id
        super().__init__(f"stage id {stage_id!r} appears more than once")


class UnknownStageId(CheckpointerError):
    """A cut or lookup references a stage id outside the graph."""

    def __init__(self, stage_id: str):
        self.stage_id = stage_id
        super().__init__(f"stage id {stage_id!r} is not part of the graph")


class MissingExecTime(CheckpointerError):
    def __init__(self, stage_id: str):
        self.stage_id = stage_id
        super().__init__(f"no execution time provided for stage {stage_id!r}")


class NegativeExecTime(CheckpointerError):
    def __init__(self, stage_id: str, value: float):
        self.stage_id = stage_id
        self.value = value
        super().__init__(f"negative execution time {value!r} for stage {stage_id!r}")


class InsufficientData(CheckpointerError):
    """Too few training samples for the requested model scope."""

    def __init__(self, scope: str, count: int, minimum: int):
        self.scope = scope
        self.count = count
        self.minimum = minimum
        super().__init__(
            f"scope {scope!r} has {count} training samples, need at least {minimum}"
        )


class SchemaMismatch(CheckpointerError):
    """A feature vector does not match the schema a model was trained with."""

    def __init__(self, expected: int, got: int):
        self.expected = expected
        self.got = got
        super().__init__(f"feature schema version mismatch: model has {expected}, input has {got}")


class EmptyInput(CheckpointerError):
    def __init__(self, what: str = "input"):
        super().__init__(f"{what} is empty or too short to evaluate")


class TooLargeForExact(CheckpointerError):
    """Graph exceeds the configured cap for exhaustive solving."""

    def __init__(self, size: int, cap: int):
        self.size = size
        self.cap = cap
        super().__init__(f"graph has {size} stages, exact solver capped at {cap}")


class EmptyTrainingSet(CheckpointerError):
    def __init__(self, detail: str = "no usable training offers"):
        super().__init__(detail)


class UnsortedStream(CheckpointerError):
    def __init__(self, position: int, detail: str = ""):
        self.position = position
        msg = f"offer stream is not sorted by arrival time at position {position}"
        super().__init__(msg + (f": {detail}" if detail else ""))


class InvalidSpec(CheckpointerError):
    """A workload specification fails validation."""


class ParseError(CheckpointerError):
    """A data file has a malformed value at a known location."""

    def __init__(self, line: int, column: str, detail: str):
        self.line = line
        self.column = column
        super().__init__(f"line {line}, column {column!r}: {detail}")


class SchemaError(CheckpointerError):
    """A data file is missing a required column or field."""

    def __init__(self, missing: str):
        self.missing = missing
        super().__init__(f"missing required column or field {missing!r}")


class MissingModels(CheckpointerError):
    def __init__(self, strategy: str, detail: str = ""):
        self.strategy = strategy
        msg = f"strategy {strategy!r} needs fitted cost models"
        super().__init__(msg + (f": {detail}" if detail else ""))


class UsageError(CheckpointerError):
    """Bad command-line arguments or flag combinations."""
