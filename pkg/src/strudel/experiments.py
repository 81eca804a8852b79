"""Full model vs. context-only ablation on the synthetic choice corpus.

Both arms share data, seeds, schedule and loss weights; the only difference
is ``use_graph``.  Held-out dialogues are generated from a disjoint seed.
"""

from __future__ import annotations

import logging
import statistics
import time
from dataclasses import dataclass, field

from strudel.evaluation import evaluate
from strudel.synthetic import choice_corpus
from strudel.training import TrainConfig, build_model, finetune, posttrain

log = logging.getLogger(__name__)


@dataclass
class DirectionConfig:
    seeds: tuple[int, ...] = (0, 1, 2, 3, 4)
    n_train: int = 768
    n_test: int = 200
    explicit: bool = True
    train: TrainConfig = field(
        default_factory=lambda: TrainConfig(steps_posttrain=900, steps_finetune=600)
    )


@dataclass
class ArmResult:
    seed: int
    use_graph: bool
    test_accuracy: float
    seconds: float


@dataclass
class DirectionResult:
    runs: list[ArmResult]

    def mean(self, use_graph: bool) -> float:
        return statistics.mean(r.test_accuracy for r in self.runs if r.use_graph == use_graph)

    @property
    def full(self) -> float:
        return self.mean(True)

    @property
    def ablation(self) -> float:
        return self.mean(False)

    @property
    def passed(self) -> bool:
        return self.full > self.ablation


def run_arm(cfg: TrainConfig, pairs, train_examples, test_examples) -> float:
    model = build_model(cfg)
    post = posttrain(model, pairs, train_examples, cfg)
    model = finetune(post.checkpoint, train_examples, cfg).model if cfg.steps_finetune else post.model
    return float(evaluate(model, test_examples).accuracy)


def direction_check(dc: DirectionConfig = DirectionConfig()) -> DirectionResult:
    runs = []
    for seed in dc.seeds:
        items, train_ex = choice_corpus(dc.n_train, seed=1000 + seed, explicit=dc.explicit)
        _, test_ex = choice_corpus(dc.n_test, seed=5000 + seed, prefix="test", explicit=dc.explicit)
        pairs = [(it.dialogue, it.annotation) for it in items]
        for use_graph in (True, False):
            cfg = dc.train.replace(seed=seed, use_graph=use_graph)
            t0 = time.perf_counter()
            acc = run_arm(cfg, pairs, train_ex, test_ex)
            runs.append(ArmResult(seed, use_graph, acc, time.perf_counter() - t0))
            log.info("seed %d graph=%s held-out accuracy %.3f", seed, use_graph, acc)
    return DirectionResult(runs)
