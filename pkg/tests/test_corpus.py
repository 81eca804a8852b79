import json
from fractions import Fraction

import pytest
from hypothesis import given
from hypothesis import strategies as st

from conftest import write_lines
from strudel.corpus import (
    ENTRY_KINDS,
    Dialogue,
    EntryKind,
    StrudelAnnotation,
    TaskKind,
    Turn,
    annotation_to_record,
    compute_annotation_stats,
    dialogue_to_record,
    load_annotations,
    load_dialogues,
    load_examples,
    make_annotation,
    validate_annotation,
    write_annotations,
    write_dialogues,
    write_examples,
)
from strudel.errors import (
    DuplicateId,
    EmptyInput,
    GoldIndexOutOfRange,
    InvalidSpeaker,
    MalformedRecord,
    MissingEntry,
    QuestionPresenceMismatch,
)
from strudel.synthetic import CINEMA_ANNOTATION, CINEMA_DIALOGUE

CINEMA_RECORD = {
    "dialogue_id": "dream-cinema",
    "relationship": "Wife and husband.",
    "purpose_theme": "Go to the cinema this weekend.",
    "task_intention_s1": "Pick a movie to watch.",
    "task_intention_s2": "Pick a movie to watch.",
    "problem_disagreement": (
        "It's boring for Bill to watch the film Happy Potter and the Sorcerer's Stone."
    ),
    "solution": "Bill will watch another film called the Most Wanted.",
    "conclusion_agreement": "Go to the cinema and come home together, but watch different films.",
}


def dlg(did, *speakers):
    return {"id": did, "turns": [{"speaker": s, "text": f"turn {i}"} for i, s in enumerate(speakers)]}


# -- dialogues ---------------------------------------------------------------


def test_load_cinema_dialogue(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [json.dumps(dialogue_to_record(CINEMA_DIALOGUE))])
    (d,) = load_dialogues(path)
    assert d.turns[0].speaker == 1
    assert [t.speaker for t in d.turns] == [1, 2, 1, 2, 1, 2]


def test_empty_file_gives_no_dialogues(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [])
    assert load_dialogues(path) == []


def test_speaker_three_rejected_and_all_lines_reported(tmp_path):
    path = write_lines(
        tmp_path / "d.jsonl",
        [json.dumps(dlg("a", 1, 3)), json.dumps(dlg("b", 1, 2)), json.dumps(dlg("c", 1, 2, 7))],
    )
    with pytest.raises(InvalidSpeaker) as exc:
        load_dialogues(path)
    assert [p.line_no for p in exc.value.problems] == [1, 3]


def test_single_speaker_rejected_at_ingestion(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [json.dumps(dlg("a", 1, 1))])
    with pytest.raises(InvalidSpeaker):
        load_dialogues(path)


def test_second_speaker_opening_rejected(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [json.dumps(dlg("a", 2, 1))])
    with pytest.raises(InvalidSpeaker):
        load_dialogues(path)


def test_duplicate_and_malformed(tmp_path):
    path = write_lines(tmp_path / "d.jsonl", [json.dumps(dlg("a", 1, 2))] * 2)
    with pytest.raises(DuplicateId):
        load_dialogues(path)
    path = write_lines(tmp_path / "m.jsonl", ["{not json", json.dumps(dlg("a", 1, 2))])
    with pytest.raises(MalformedRecord) as exc:
        load_dialogues(path)
    assert exc.value.problems[0].line_no == 1


def test_dialogue_constructor_invariants():
    Dialogue("x", (Turn(1, "Hello."),))
    with pytest.raises(ValueError):
        Dialogue("x", ())
    with pytest.raises(ValueError):
        Dialogue("x", (Turn(2, "Hi."),))
    with pytest.raises(ValueError):
        Dialogue("x", (Turn(1, "Hi."), Turn(3, "Yo.")))


# -- annotations -------------------------------------------------------------


def test_load_worked_example_annotation(tmp_path):
    path = write_lines(tmp_path / "a.jsonl", [json.dumps(CINEMA_RECORD)])
    (ann,) = load_annotations(path)
    assert ann.present() == list(ENTRY_KINDS)
    assert ann[EntryKind.RELATIONSHIP] == "Wife and husband."
    assert ann == CINEMA_ANNOTATION


def test_all_na_annotation(tmp_path):
    rec = {"dialogue_id": "x", **{k.value: "N/A" for k in ENTRY_KINDS}}
    (ann,) = load_annotations(write_lines(tmp_path / "a.jsonl", [json.dumps(rec)]))
    assert all(ann[k] is None for k in ENTRY_KINDS)
    assert validate_annotation(ann) == []


def test_six_entries_is_missing_entry(tmp_path):
    rec = dict(CINEMA_RECORD)
    del rec["solution"]
    with pytest.raises(MissingEntry) as exc:
        load_annotations(write_lines(tmp_path / "a.jsonl", [json.dumps(rec)]))
    assert "solution" in str(exc.value)


def test_validate_annotation():
    assert validate_annotation(CINEMA_ANNOTATION) == []
    entries = dict(CINEMA_ANNOTATION.entries)
    entries[EntryKind.SOLUTION] = ""
    (v,) = validate_annotation(StrudelAnnotation("x", entries))
    assert (v.kind, v.rule) == (EntryKind.SOLUTION, "non-empty")
    entries[EntryKind.SOLUTION] = "N/A"
    (v,) = validate_annotation(StrudelAnnotation("x", entries))
    assert v.rule == "na-marker"
    del entries[EntryKind.SOLUTION]
    (v,) = validate_annotation(StrudelAnnotation("x", entries))
    assert v.rule == "present"


# -- statistics --------------------------------------------------------------


def test_stats_two_annotations():
    other = make_annotation("y", solution="Something else.")
    stats = compute_annotation_stats([CINEMA_ANNOTATION, other])
    rel = stats[EntryKind.RELATIONSHIP]
    assert rel.appearance_fraction == Fraction(1, 2)
    assert rel.avg_length_words == 3
    # "Bill will watch another film called the Most Wanted." = 9 words; "Something else." = 2
    sol = stats[EntryKind.SOLUTION]
    assert sol.appearance_fraction == 1
    assert sol.avg_length_words == Fraction(11, 2)


def test_stats_all_na_report_zero():
    stats = compute_annotation_stats([make_annotation("a"), make_annotation("b")])
    for k in ENTRY_KINDS:
        assert stats[k].appearance_fraction == 0
        assert stats[k].avg_length_words == 0


def test_stats_single_one_word_annotation():
    ann = make_annotation("a", **{k.value: "word" for k in ENTRY_KINDS})
    stats = compute_annotation_stats([ann])
    for k in ENTRY_KINDS:
        assert stats[k].appearance_fraction == 1
        assert stats[k].avg_length_words == 1


def test_stats_empty_input():
    with pytest.raises(EmptyInput):
        compute_annotation_stats([])


entry_text = st.one_of(
    st.none(),
    st.text(alphabet=st.characters(codec="utf-8", exclude_categories=["Cs", "Cc"]), min_size=1)
    .filter(lambda s: s.strip() and s.strip() != "N/A"),
)
annotations = st.builds(
    lambda did, texts: StrudelAnnotation(did, dict(zip(ENTRY_KINDS, texts))),
    st.text(alphabet="abcdef0123456789", min_size=1, max_size=8),
    st.lists(entry_text, min_size=7, max_size=7),
)


@given(st.lists(annotations, min_size=1, max_size=12), st.randoms())
def test_stats_permutation_invariant_and_counts(anns, rnd):
    stats = compute_annotation_stats(anns)
    shuffled = list(anns)
    rnd.shuffle(shuffled)
    assert compute_annotation_stats(shuffled) == stats
    for k in ENTRY_KINDS:
        assert (stats[k].appearance_fraction * len(anns)).denominator == 1


# -- examples ----------------------------------------------------------------


def example_record(question=None, n=4, gold=0):
    return {
        "id": "e1",
        "dialogue": dialogue_to_record(CINEMA_DIALOGUE),
        "question": question,
        "candidates": [f"candidate {i}" for i in range(n)],
        "gold_index": gold,
    }


def test_response_prediction_example(tmp_path):
    path = write_lines(tmp_path / "e.jsonl", [json.dumps(example_record())])
    (ex,) = load_examples(path, TaskKind.RESPONSE_PREDICTION)
    assert ex.task_kind is TaskKind.RESPONSE_PREDICTION
    assert ex.question is None and len(ex.candidates) == 4


def test_question_answering_example(tmp_path):
    rec = example_record("What will Bill watch?", n=3, gold=1)
    (ex,) = load_examples(write_lines(tmp_path / "e.jsonl", [json.dumps(rec)]),
                          TaskKind.QUESTION_ANSWERING)
    assert ex.task_kind is TaskKind.QUESTION_ANSWERING
    assert len(ex.candidates) == 3


def test_gold_index_out_of_range(tmp_path):
    path = write_lines(tmp_path / "e.jsonl", [json.dumps(example_record(gold=5))])
    with pytest.raises(GoldIndexOutOfRange):
        load_examples(path, TaskKind.RESPONSE_PREDICTION)


def test_question_presence_mismatch(tmp_path):
    path = write_lines(tmp_path / "e.jsonl", [json.dumps(example_record("Why?"))])
    with pytest.raises(QuestionPresenceMismatch):
        load_examples(path, TaskKind.RESPONSE_PREDICTION)
    path = write_lines(tmp_path / "f.jsonl", [json.dumps(example_record())])
    with pytest.raises(QuestionPresenceMismatch):
        load_examples(path, TaskKind.QUESTION_ANSWERING)


# -- round trip --------------------------------------------------------------

turn_text = st.text(
    alphabet=st.characters(codec="utf-8", exclude_categories=["Cs"]), min_size=1, max_size=30
).filter(str.strip)


@st.composite
def dialogues(draw, did=None):
    n = draw(st.integers(2, 6))
    speakers = [1] + draw(st.lists(st.sampled_from([1, 2]), min_size=n - 2, max_size=n - 2)) + [2]
    texts = draw(st.lists(turn_text, min_size=n, max_size=n))
    did = did or draw(st.text(alphabet="xyz0123", min_size=1, max_size=6))
    return Dialogue(did, tuple(Turn(s, t) for s, t in zip(speakers, texts)))


@given(st.lists(dialogues(), max_size=5, unique_by=lambda d: d.id), st.lists(annotations, max_size=5))
def test_round_trip(tmp_path_factory, ds, anns):
    tmp = tmp_path_factory.mktemp("rt")
    write_dialogues(tmp / "d.jsonl", ds)
    write_annotations(tmp / "a.jsonl", anns)
    assert load_dialogues(tmp / "d.jsonl") == ds
    assert load_annotations(tmp / "a.jsonl") == anns


def test_round_trip_fixture(fixture_corpus, tmp_path):
    dialogues_, annotations_, examples, _ = fixture_corpus
    write_examples(tmp_path / "e.jsonl", examples)
    assert load_examples(tmp_path / "e.jsonl", TaskKind.RESPONSE_PREDICTION) == examples
    assert [annotation_to_record(a) for a in annotations_][0] == CINEMA_RECORD


def test_shipped_fixture_shape(fixture_corpus):
    dialogues_, annotations_, examples, pairs = fixture_corpus
    assert (len(dialogues_), len(annotations_), len(examples)) == (8, 8, 16)
    assert all(len(e.candidates) == 4 for e in examples)
    assert len(pairs) == 8
