from pathlib import Path

import hypothesis
import pytest
import torch

from strudel.corpus import TaskKind, load_annotations, load_dialogues, load_examples

hypothesis.settings.register_profile("default", deadline=None, max_examples=50)
hypothesis.settings.register_profile("fast", deadline=None, max_examples=5)
hypothesis.settings.load_profile("default")

FIXTURE_DIR = Path(__file__).parents[1] / "data" / "fixture"


@pytest.fixture(autouse=True)
def _single_thread():
    torch.set_num_threads(1)


@pytest.fixture(scope="session")
def fixture_dir() -> Path:
    return FIXTURE_DIR


@pytest.fixture(scope="session")
def fixture_corpus():
    dialogues = load_dialogues(FIXTURE_DIR / "dialogues.jsonl")
    annotations = load_annotations(FIXTURE_DIR / "annotations.jsonl")
    examples = load_examples(FIXTURE_DIR / "examples.jsonl", TaskKind.RESPONSE_PREDICTION)
    by_id = {d.id: d for d in dialogues}
    pairs = [(by_id[a.dialogue_id], a) for a in annotations]
    return dialogues, annotations, examples, pairs


def write_lines(path: Path, lines) -> Path:
    path.write_text("".join(line + "\n" for line in lines), encoding="utf-8")
    return path


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if RESULTS:
        terminalreporter.section("acceptance criteria")
        for line in RESULTS:
            terminalreporter.write_line(line)
