"""Prompt questions and the marker-delimited query sequences fed to encoders."""

from __future__ import annotations

import enum
from dataclasses import dataclass

from strudel.corpus import ENTRY_KINDS, Dialogue, EntryKind

PROMPT_PREFIX = "Summarize: what is "

ENTRY_DEFINITIONS: dict[EntryKind, str] = {
    EntryKind.RELATIONSHIP: "the relationship between the two speakers of the dialogue.",
    EntryKind.PURPOSE_THEME: (
        "the main purpose or theme for which the dialogue is made between the two speakers."
    ),
    EntryKind.TASK_INTENTION_S1: (
        "the main task or intention that the first speaker would like to achieve in the dialogue."
    ),
    EntryKind.TASK_INTENTION_S2: (
        "the main task or intention that the second speaker would like to achieve in the dialogue."
    ),
    EntryKind.PROBLEM_DISAGREEMENT: (
        "the most important problem or disagreement that the two speakers need to solve"
        " in the dialogue."
    ),
    EntryKind.SOLUTION: (
        "the solution that the two speakers reach for the most important problem or"
        " disagreement in the dialogue."
    ),
    EntryKind.CONCLUSION_AGREEMENT: (
        "the final conclusion or agreement that the two speakers reach in the dialogue."
    ),
}


class Marker(enum.Enum):
    CLS = "[CLS]"
    SEP = "[SEP]"
    EOS = "[EOS]"


Segment = Marker | str


@dataclass(frozen=True)
class PromptQuestion:
    entry: EntryKind
    text: str


@dataclass(frozen=True)
class QuerySequence:
    """Alternating markers and text payloads: CLS p (SEP p)* EOS."""

    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        check_marker_grammar(self.segments)

    @property
    def payloads(self) -> list[str]:
        return [s for s in self.segments if isinstance(s, str)]

    def __str__(self) -> str:
        return " ".join(s.value if isinstance(s, Marker) else s for s in self.segments)


def check_marker_grammar(segments) -> None:
    segs = list(segments)
    if len(segs) < 3 or segs[0] is not Marker.CLS or segs[-1] is not Marker.EOS:
        raise ValueError("query must start with CLS, end with EOS and hold a payload")
    # Payloads sit at odd positions, SEP at the even interior positions.
    for i, s in enumerate(segs[1:-1], 1):
        if i % 2:
            if not isinstance(s, str) or not s:
                raise ValueError(f"segment {i} must be a non-empty payload, got {s!r}")
        elif s is not Marker.SEP:
            raise ValueError(f"segment {i} must be SEP, got {s!r}")
    if len(segs) % 2 == 0:
        raise ValueError("query must end with a payload followed by EOS")


def entry_definition(kind: EntryKind) -> str:
    return ENTRY_DEFINITIONS[kind]


def prompt_question(kind: EntryKind) -> PromptQuestion:
    definition = entry_definition(kind)
    assert definition.endswith(".")
    return PromptQuestion(kind, PROMPT_PREFIX + definition[:-1] + "?")


PROMPT_QUESTIONS: dict[EntryKind, str] = {k: prompt_question(k).text for k in ENTRY_KINDS}


def render_dialogue(d: Dialogue) -> str:
    return "\n".join(f"S{t.speaker}: {t.text}" for t in d.turns)


def build_entry_query(d: Dialogue, kind: EntryKind) -> QuerySequence:
    return QuerySequence(
        (Marker.CLS, render_dialogue(d), Marker.SEP, prompt_question(kind).text, Marker.EOS)
    )


def build_context_query(d: Dialogue, question: str | None, answer: str) -> QuerySequence:
    if not answer or not answer.strip():
        raise ValueError("candidate answer must be non-empty")
    segs: list[Segment] = [Marker.CLS, render_dialogue(d), Marker.SEP]
    if question:
        segs += [question, Marker.SEP]
    segs += [answer, Marker.EOS]
    return QuerySequence(tuple(segs))


def build_text_query(text: str) -> QuerySequence:
    """Single-payload query, used for annotation and speaker sentences."""
    return QuerySequence((Marker.CLS, text, Marker.EOS))
