"""Exception types shared across the package."""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Problem:
    line_no: int
    kind: str
    message: str

    def __str__(self) -> str:
        return f"line {self.line_no}: [{self.kind}] {self.message}"


class RecordError(ValueError):
    """A record file failed to load.

    Carries every offending line found in the file, not just the first one.
    The concrete subclass is chosen from the first problem encountered.
    """

    kind = "record"

    def __init__(self, problems: list[Problem], path: str | None = None):
        self.problems = list(problems)
        self.path = path
        head = f"{path}: " if path else ""
        report = "\n".join(str(p) for p in self.problems)
        super().__init__(f"{head}{len(self.problems)} problem(s)\n{report}")


class MalformedRecord(RecordError):
    kind = "malformed"


class DuplicateId(RecordError):
    kind = "duplicate-id"


class InvalidSpeaker(RecordError):
    kind = "invalid-speaker"


class MissingEntry(RecordError):
    kind = "missing-entry"


class GoldIndexOutOfRange(RecordError):
    kind = "gold-index"


class QuestionPresenceMismatch(RecordError):
    kind = "question-presence"


RECORD_ERRORS: dict[str, type[RecordError]] = {
    cls.kind: cls
    for cls in (
        MalformedRecord,
        DuplicateId,
        InvalidSpeaker,
        MissingEntry,
        GoldIndexOutOfRange,
        QuestionPresenceMismatch,
    )
}


class EmptyInput(ValueError):
    pass


class EmptyBatch(ValueError):
    pass


class EmptyQuery(ValueError):
    pass


class EmptyText(ValueError):
    pass


class DimMismatch(ValueError):
    pass


class FrozenRequired(ValueError):
    pass


class ZeroVector(ArithmeticError):
    """Cosine similarity requested for a vector with zero norm."""


class CheckpointMismatch(ValueError):
    pass
