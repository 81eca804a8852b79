"""Dialogues, structured-summary annotations and comprehension examples.

All three record types live in line-delimited JSON files (one object per
line).  Loaders validate the whole file before returning and report every
offending line at once.
"""

from __future__ import annotations

import enum
import json
import os
from collections.abc import Iterable, Mapping, Sequence
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Any

from strudel.errors import (
    RECORD_ERRORS,
    EmptyInput,
    MalformedRecord,
    Problem,
)

NA_MARKER = "N/A"


class EntryKind(enum.Enum):
    """The seven summary entries, in canonical (a)-(g) order."""

    RELATIONSHIP = "relationship"
    PURPOSE_THEME = "purpose_theme"
    TASK_INTENTION_S1 = "task_intention_s1"
    TASK_INTENTION_S2 = "task_intention_s2"
    PROBLEM_DISAGREEMENT = "problem_disagreement"
    SOLUTION = "solution"
    CONCLUSION_AGREEMENT = "conclusion_agreement"

    @property
    def title(self) -> str:
        return ENTRY_TITLES[self]


ENTRY_KINDS: tuple[EntryKind, ...] = tuple(EntryKind)

ENTRY_TITLES = {
    EntryKind.RELATIONSHIP: "Relationship",
    EntryKind.PURPOSE_THEME: "Purpose/Theme",
    EntryKind.TASK_INTENTION_S1: "Task/Intention S1",
    EntryKind.TASK_INTENTION_S2: "Task/Intention S2",
    EntryKind.PROBLEM_DISAGREEMENT: "Problem/Disagreement",
    EntryKind.SOLUTION: "Solution",
    EntryKind.CONCLUSION_AGREEMENT: "Conclusion/Agreement",
}


class TaskKind(enum.Enum):
    QUESTION_ANSWERING = "qa"
    RESPONSE_PREDICTION = "rp"


@dataclass(frozen=True)
class Turn:
    speaker: int
    text: str


@dataclass(frozen=True)
class Dialogue:
    """Two-speaker dialogue; speaker 1 always opens."""

    id: str
    turns: tuple[Turn, ...]

    def __post_init__(self):
        object.__setattr__(self, "turns", tuple(self.turns))
        problems = _turn_problems(self.turns)
        if problems:
            raise ValueError(f"dialogue {self.id!r}: " + "; ".join(problems))

    @property
    def speakers(self) -> set[int]:
        return {t.speaker for t in self.turns}


def _turn_problems(turns: Sequence[Turn]) -> list[str]:
    if not turns:
        return ["no turns"]
    out = []
    for i, t in enumerate(turns):
        if t.speaker not in (1, 2):
            out.append(f"turn {i}: speaker {t.speaker!r} not in {{1, 2}}")
        if not isinstance(t.text, str) or not t.text.strip():
            out.append(f"turn {i}: empty text")
    if turns[0].speaker != 1:
        out.append("first turn must belong to speaker 1")
    return out


@dataclass(frozen=True)
class StrudelAnnotation:
    """Seven-entry structured summary of one dialogue.

    ``entries`` maps every :class:`EntryKind` to its text, or to ``None``
    when the annotator wrote N/A.
    """

    dialogue_id: str
    entries: Mapping[EntryKind, str | None]

    def __getitem__(self, kind: EntryKind) -> str | None:
        return self.entries[kind]

    def present(self) -> list[EntryKind]:
        return [k for k in ENTRY_KINDS if self.entries.get(k) is not None]


@dataclass(frozen=True)
class Violation:
    kind: EntryKind | None
    rule: str
    message: str


def validate_annotation(ann: StrudelAnnotation) -> list[Violation]:
    out = []
    for kind in ENTRY_KINDS:
        if kind not in ann.entries:
            out.append(Violation(kind, "present", f"{kind.value} missing"))
            continue
        text = ann.entries[kind]
        if text is None:
            continue
        if not isinstance(text, str):
            out.append(Violation(kind, "type", f"{kind.value} is not a string"))
        elif not text.strip():
            out.append(Violation(kind, "non-empty", f"{kind.value} is empty"))
        elif text.strip() == NA_MARKER:
            out.append(
                Violation(kind, "na-marker", f"{kind.value} holds a literal {NA_MARKER!r}")
            )
    for key in ann.entries:
        if not isinstance(key, EntryKind):
            out.append(Violation(None, "unknown-entry", f"unknown entry key {key!r}"))
    if not ann.dialogue_id:
        out.append(Violation(None, "dialogue-id", "empty dialogue_id"))
    return out


@dataclass(frozen=True)
class ComprehensionExample:
    id: str
    dialogue: Dialogue
    question: str | None
    candidates: tuple[str, ...]
    gold_index: int
    task_kind: TaskKind = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        object.__setattr__(self, "candidates", tuple(self.candidates))
        if self.task_kind is None:
            kind = (
                TaskKind.RESPONSE_PREDICTION
                if self.question is None
                else TaskKind.QUESTION_ANSWERING
            )
            object.__setattr__(self, "task_kind", kind)
        if len(self.candidates) < 2:
            raise ValueError(f"example {self.id!r}: need at least 2 candidates")
        if any(not c.strip() for c in self.candidates):
            raise ValueError(f"example {self.id!r}: empty candidate")
        if not 0 <= self.gold_index < len(self.candidates):
            raise ValueError(f"example {self.id!r}: gold_index out of range")
        if (self.task_kind is TaskKind.RESPONSE_PREDICTION) != (self.question is None):
            raise ValueError(f"example {self.id!r}: question presence mismatch")


@dataclass(frozen=True)
class EntryStats:
    appearance_fraction: Fraction
    avg_length_words: Fraction


@dataclass(frozen=True)
class AnnotationStats:
    n_annotations: int
    per_entry: Mapping[EntryKind, EntryStats]

    def __getitem__(self, kind: EntryKind) -> EntryStats:
        return self.per_entry[kind]


def word_count(text: str) -> int:
    return len(text.split())


def compute_annotation_stats(anns: Sequence[StrudelAnnotation]) -> AnnotationStats:
    if not anns:
        raise EmptyInput("annotation statistics need at least one annotation")
    per_entry = {}
    for kind in ENTRY_KINDS:
        lengths = [word_count(a.entries[kind]) for a in anns if a.entries[kind] is not None]
        avg = Fraction(sum(lengths), len(lengths)) if lengths else Fraction(0)
        per_entry[kind] = EntryStats(Fraction(len(lengths), len(anns)), avg)
    return AnnotationStats(len(anns), per_entry)


# ---------------------------------------------------------------------------
# record (de)serialisation


class _Collector:
    def __init__(self, path):
        self.path = str(path)
        self.problems: list[Problem] = []

    def add(self, line_no: int, kind: str, message: str):
        self.problems.append(Problem(line_no, kind, message))

    def raise_if_any(self):
        if self.problems:
            cls = RECORD_ERRORS[self.problems[0].kind]
            raise cls(self.problems, self.path)


def _iter_records(path, col: _Collector) -> Iterable[tuple[int, Any]]:
    with open(path, encoding="utf-8") as f:
        for line_no, line in enumerate(f, 1):
            if not line.strip():
                continue
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as e:
                col.add(line_no, "malformed", f"invalid JSON: {e}")
                continue
            if not isinstance(rec, dict):
                col.add(line_no, "malformed", "record is not an object")
                continue
            yield line_no, rec


def _parse_dialogue(obj: Any, line_no: int, col: _Collector) -> Dialogue | None:
    if not isinstance(obj, dict):
        col.add(line_no, "malformed", "dialogue is not an object")
        return None
    did = obj.get("id")
    turns = obj.get("turns")
    if not isinstance(did, str) or not did:
        col.add(line_no, "malformed", "dialogue id must be a non-empty string")
        return None
    if not isinstance(turns, list) or not turns:
        col.add(line_no, "malformed", f"dialogue {did!r}: turns must be a non-empty list")
        return None
    parsed = []
    for i, t in enumerate(turns):
        if (
            not isinstance(t, dict)
            or not isinstance(t.get("text"), str)
            or not t["text"].strip()
            or isinstance(t.get("speaker"), bool)
            or not isinstance(t.get("speaker"), int)
        ):
            col.add(line_no, "malformed", f"dialogue {did!r}: turn {i} needs int speaker and text")
            return None
        parsed.append(Turn(t["speaker"], t["text"]))
    bad = [t.speaker for t in parsed if t.speaker not in (1, 2)]
    if bad:
        col.add(line_no, "invalid-speaker", f"dialogue {did!r}: speaker values {bad} not in {{1, 2}}")
        return None
    if parsed[0].speaker != 1:
        col.add(line_no, "invalid-speaker", f"dialogue {did!r}: first turn must be speaker 1")
        return None
    if {t.speaker for t in parsed} != {1, 2}:
        col.add(line_no, "invalid-speaker", f"dialogue {did!r}: both speakers must appear")
        return None
    return Dialogue(did, tuple(parsed))


def load_dialogues(path: str | os.PathLike) -> list[Dialogue]:
    col = _Collector(path)
    out: list[Dialogue] = []
    seen: set[str] = set()
    for line_no, rec in _iter_records(path, col):
        d = _parse_dialogue(rec, line_no, col)
        if d is None:
            continue
        if d.id in seen:
            col.add(line_no, "duplicate-id", f"dialogue id {d.id!r} already seen")
            continue
        seen.add(d.id)
        out.append(d)
    col.raise_if_any()
    return out


def load_annotations(path: str | os.PathLike) -> list[StrudelAnnotation]:
    col = _Collector(path)
    out: list[StrudelAnnotation] = []
    for line_no, rec in _iter_records(path, col):
        did = rec.get("dialogue_id")
        if not isinstance(did, str) or not did:
            col.add(line_no, "malformed", "dialogue_id must be a non-empty string")
            continue
        unknown = set(rec) - {"dialogue_id"} - {k.value for k in ENTRY_KINDS}
        if unknown:
            col.add(line_no, "malformed", f"{did!r}: unknown fields {sorted(unknown)}")
            continue
        entries: dict[EntryKind, str | None] = {}
        ok = True
        for kind in ENTRY_KINDS:
            if kind.value not in rec:
                col.add(line_no, "missing-entry", f"{did!r}: missing entry {kind.value}")
                ok = False
                continue
            val = rec[kind.value]
            if not isinstance(val, str):
                col.add(line_no, "malformed", f"{did!r}: {kind.value} must be a string")
                ok = False
                continue
            entries[kind] = None if val.strip() == NA_MARKER else val
        if not ok:
            continue
        ann = StrudelAnnotation(did, entries)
        for v in validate_annotation(ann):
            col.add(line_no, "malformed", f"{did!r}: {v.message}")
            ok = False
        if ok:
            out.append(ann)
    col.raise_if_any()
    return out


def load_examples(path: str | os.PathLike, task_kind: TaskKind) -> list[ComprehensionExample]:
    col = _Collector(path)
    out: list[ComprehensionExample] = []
    seen: set[str] = set()
    for line_no, rec in _iter_records(path, col):
        eid = rec.get("id")
        if not isinstance(eid, str) or not eid:
            col.add(line_no, "malformed", "example id must be a non-empty string")
            continue
        dlg = _parse_dialogue(rec.get("dialogue"), line_no, col)
        if dlg is None:
            continue
        question = rec.get("question")
        cands = rec.get("candidates")
        gold = rec.get("gold_index")
        if question is not None and (not isinstance(question, str) or not question.strip()):
            col.add(line_no, "malformed", f"{eid!r}: question must be a non-empty string or null")
            continue
        if (
            not isinstance(cands, list)
            or len(cands) < 2
            or not all(isinstance(c, str) and c.strip() for c in cands)
        ):
            col.add(line_no, "malformed", f"{eid!r}: candidates must be >= 2 non-empty strings")
            continue
        if isinstance(gold, bool) or not isinstance(gold, int):
            col.add(line_no, "malformed", f"{eid!r}: gold_index must be an integer")
            continue
        if not 0 <= gold < len(cands):
            col.add(line_no, "gold-index", f"{eid!r}: gold_index {gold} not in [0, {len(cands)})")
            continue
        if (question is None) != (task_kind is TaskKind.RESPONSE_PREDICTION):
            want = "absent" if task_kind is TaskKind.RESPONSE_PREDICTION else "present"
            col.add(line_no, "question-presence", f"{eid!r}: question must be {want}")
            continue
        if eid in seen:
            col.add(line_no, "duplicate-id", f"example id {eid!r} already seen")
            continue
        seen.add(eid)
        out.append(ComprehensionExample(eid, dlg, question, tuple(cands), gold, task_kind))
    col.raise_if_any()
    return out


def dialogue_to_record(d: Dialogue) -> dict:
    return {"id": d.id, "turns": [{"speaker": t.speaker, "text": t.text} for t in d.turns]}


def annotation_to_record(ann: StrudelAnnotation) -> dict:
    rec: dict[str, str] = {"dialogue_id": ann.dialogue_id}
    for kind in ENTRY_KINDS:
        text = ann.entries[kind]
        rec[kind.value] = NA_MARKER if text is None else text
    return rec


def example_to_record(ex: ComprehensionExample) -> dict:
    return {
        "id": ex.id,
        "dialogue": dialogue_to_record(ex.dialogue),
        "question": ex.question,
        "candidates": list(ex.candidates),
        "gold_index": ex.gold_index,
    }


def write_records(path: str | os.PathLike, records: Iterable[dict]) -> None:
    """Write records atomically: readers never observe a half-written file."""
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        for rec in records:
            f.write(json.dumps(rec, ensure_ascii=False) + "\n")
    os.replace(tmp, path)


def write_dialogues(path, dialogues: Iterable[Dialogue]) -> None:
    write_records(path, (dialogue_to_record(d) for d in dialogues))


def write_annotations(path, anns: Iterable[StrudelAnnotation]) -> None:
    write_records(path, (annotation_to_record(a) for a in anns))


def write_examples(path, examples: Iterable[ComprehensionExample]) -> None:
    write_records(path, (example_to_record(e) for e in examples))


def make_annotation(dialogue_id: str, **texts: str) -> StrudelAnnotation:
    """Build an annotation from keyword entry texts; missing or "N/A" entries become N/A."""
    entries = {}
    for kind in ENTRY_KINDS:
        text = texts.pop(kind.value, None)
        entries[kind] = None if text is None or text.strip() == NA_MARKER else text
    if texts:
        raise TypeError(f"unknown entries: {sorted(texts)}")
    return StrudelAnnotation(dialogue_id, entries)
