"""Small synthetic corpora for tests, smoke runs and the ablation experiment.

``choice_corpus`` builds two-speaker planning dialogues in which one
speaker rejects one of two options; the correct final response names the
option that survives, which is exactly what the Solution entry records.
"""

from __future__ import annotations

import random
from dataclasses import dataclass

from strudel.corpus import (
    ComprehensionExample,
    Dialogue,
    StrudelAnnotation,
    TaskKind,
    Turn,
    make_annotation,
)

CINEMA_DIALOGUE = Dialogue(
    "dream-cinema",
    (
        Turn(1, "Bill, shall we go to the cinema this weekend?"),
        Turn(2, "Sure. What is on?"),
        Turn(1, "I hear Harry Potter and the Sorcerer's Stone is showing."),
        Turn(2, "That sounds boring to me. I like violent films better."),
        Turn(1, "Then you can watch the Most Wanted while I watch Harry Potter."),
        Turn(2, "Good idea, and we can go home together afterwards."),
    ),
)

CINEMA_ANNOTATION = make_annotation(
    "dream-cinema",
    relationship="Wife and husband.",
    purpose_theme="Go to the cinema this weekend.",
    task_intention_s1="Pick a movie to watch.",
    task_intention_s2="Pick a movie to watch.",
    problem_disagreement=(
        "It's boring for Bill to watch the film Happy Potter and the Sorcerer's Stone."
    ),
    solution="Bill will watch another film called the Most Wanted.",
    conclusion_agreement="Go to the cinema and come home together, but watch different films.",
)


@dataclass(frozen=True)
class Domain:
    activity: str
    items: tuple[str, ...]
    verb: str  # format string with {x}


DOMAINS = (
    Domain("go to the cinema", ("comedy", "thriller", "cartoon", "documentary", "western",
                                "musical"), "watch the {x}"),
    Domain("have dinner out", ("pizza", "sushi", "curry", "noodles", "tacos", "salad"),
           "eat {x}"),
    Domain("travel downtown", ("bus", "taxi", "train", "bike", "tram", "ferry"),
           "take the {x}"),
    Domain("buy a gift for mom", ("scarf", "watch", "book", "vase", "lamp", "candle"),
           "buy the {x}"),
    Domain("paint the kitchen", ("blue", "green", "yellow", "white", "grey", "orange"),
           "use {x} paint"),
    Domain("plan a holiday", ("beach", "mountains", "city", "lake", "island", "desert"),
           "visit the {x}"),
)

RELATIONSHIPS = ("Wife and husband.", "Two friends.", "Colleagues.", "Brother and sister.",
                 "Neighbors.", None)
OPENERS = ("Shall we {a} tomorrow?", "Do you want to {a} this weekend?",
           "How about we {a} on Friday?")
OFFERS = ("Good idea. We could {p} or {q}.", "Sure. Either we {p} or we {q}.",
          "Why not. Maybe {p}, or {q}?")
OBJECTIONS = ("I really do not like the {x} idea.", "Hmm, the {x} sounds awful to me.",
              "No, I am tired of the {x}.")
AGREEMENTS = ("All right, that works for me.", "Fine, let us do that.", "Okay, deal.")
CLOSERS = ("Good, it is settled.", "Great, see you then.", "Perfect.")
RESPONSES = ("Great, I can't wait to {v}.", "Lovely, so we {v} tomorrow.",
             "Okay, I am happy to {v}.")


@dataclass(frozen=True)
class ChoiceItem:
    dialogue: Dialogue
    annotation: StrudelAnnotation
    solution: str
    rejected: str
    domain: Domain


def choice_dialogue(
    idx: int, rng: random.Random, prefix: str = "choice", explicit: bool = False
) -> ChoiceItem:
    dom = rng.choice(DOMAINS)
    a, b = rng.sample(dom.items, 2)
    # Either speaker may object; the other option survives.
    objector = rng.choice((1, 2))
    rejected, solution = rng.sample((a, b), 2)
    verb = dom.verb.format
    turns = [
        Turn(1, rng.choice(OPENERS).format(a=dom.activity)),
        Turn(2, rng.choice(OFFERS).format(p=verb(x=a), q=verb(x=b))),
    ]
    if objector == 1:
        turns += [
            Turn(1, rng.choice(OBJECTIONS).format(x=rejected)),
            Turn(2, f"Then let us {verb(x=solution)}." if explicit else "Then the other one."),
            Turn(1, rng.choice(AGREEMENTS)),
        ]
    else:
        turns += [
            Turn(1, "Which one do you prefer?"),
            Turn(2, rng.choice(OBJECTIONS).format(x=rejected)),
            Turn(1, f"Then let us {verb(x=solution)}." if explicit else "Then the other one."),
            Turn(2, rng.choice(AGREEMENTS)),
        ]
    turns.append(Turn(1 if turns[-1].speaker == 2 else 2, rng.choice(CLOSERS)))
    did = f"{prefix}-{idx:04d}"
    ann = make_annotation(
        did,
        relationship=rng.choice(RELATIONSHIPS) or "N/A",
        purpose_theme=dom.activity.capitalize() + " together.",
        task_intention_s1=f"{dom.activity.capitalize()}.",
        task_intention_s2="Pick an option." if objector == 1 else f"Avoid the {rejected}.",
        problem_disagreement=f"One speaker dislikes the {rejected}.",
        solution=verb(x=solution).capitalize() + ".",
        conclusion_agreement=f"They will {verb(x=solution)}.",
    )
    return ChoiceItem(Dialogue(did, tuple(turns)), ann, solution, rejected, dom)


def choice_example(item: ChoiceItem, rng: random.Random, n_candidates: int = 4,
                   suffix: str = "") -> ComprehensionExample:
    others = [x for x in item.domain.items if x not in (item.solution, item.rejected)]
    options = [item.solution, item.rejected, *rng.sample(others, n_candidates - 2)]
    rng.shuffle(options)
    template = rng.choice(RESPONSES)
    cands = tuple(template.format(v=item.domain.verb.format(x=x)) for x in options)
    return ComprehensionExample(
        f"{item.dialogue.id}{suffix}", item.dialogue, None, cands,
        options.index(item.solution), TaskKind.RESPONSE_PREDICTION,
    )


def choice_corpus(n_dialogues: int, seed: int, examples_per_dialogue: int = 1,
                  prefix: str = "choice", explicit: bool = False):
    """Annotated dialogues plus response-prediction examples over them."""
    rng = random.Random(seed)
    items = [choice_dialogue(i, rng, prefix, explicit) for i in range(n_dialogues)]
    examples = [
        choice_example(it, rng, suffix=f"-{j}")
        for it in items
        for j in range(examples_per_dialogue)
    ]
    return items, examples


def cinema_examples() -> list[ComprehensionExample]:
    d = CINEMA_DIALOGUE
    return [
        ComprehensionExample(
            "dream-cinema-qa", d, "What will Bill watch?",
            ("Harry Potter and the Sorcerer's Stone.", "The Most Wanted.", "A cartoon."), 1,
            TaskKind.QUESTION_ANSWERING,
        ),
        ComprehensionExample(
            "dream-cinema-rp-0", d, None,
            ("Sure, see you at the cinema.", "I will stay home alone.",
             "Let us watch Harry Potter together.", "I never go to the cinema."), 0,
            TaskKind.RESPONSE_PREDICTION,
        ),
        ComprehensionExample(
            "dream-cinema-rp-1", d, None,
            ("Let us watch Harry Potter together.", "I never go to the cinema.",
             "I will stay home alone.", "Great, I will enjoy the Most Wanted."), 3,
            TaskKind.RESPONSE_PREDICTION,
        ),
    ]


def make_fixture(seed: int = 0):
    """The shipped fixture: 8 dialogues, 8 annotations, 16 four-candidate examples."""
    rng = random.Random(seed)
    items = [choice_dialogue(i, rng, "fixture") for i in range(7)]
    dialogues = [CINEMA_DIALOGUE] + [it.dialogue for it in items]
    annotations = [CINEMA_ANNOTATION] + [it.annotation for it in items]
    examples = cinema_examples()[1:]
    for it in items:
        examples += [choice_example(it, rng, suffix=f"-{j}") for j in range(2)]
    return dialogues, annotations, examples
