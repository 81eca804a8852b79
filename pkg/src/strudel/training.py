"""Multi-task post-training and single-task fine-tuning.

Post-training minimises ``alpha1 * mean(SM) + alpha2 * mean(CE)`` with one
annotated-dialogue batch and one comprehension batch per step.  Fine-tuning
keeps only the cross-entropy term.
"""

from __future__ import annotations

import copy
import dataclasses
import hashlib
import json
import logging
import os
from collections.abc import Sequence
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np
import torch

from strudel.corpus import ComprehensionExample, Dialogue, EntryKind, StrudelAnnotation
from strudel.encoder import build_encoder
from strudel.errors import CheckpointMismatch, EmptyBatch
from strudel.heads import annotation_embeddings, semantic_matching_loss
from strudel.reasoner import GatConfig, StrudelModel, candidate_nll, predicted_index

log = logging.getLogger(__name__)

AnnotatedDialogue = tuple[Dialogue, StrudelAnnotation]

# Fields that change parameter shapes or numerics; they form the checkpoint key.
ARCH_FIELDS = (
    "encoder_backend",
    "encoder_dim",
    "encoder_layers",
    "encoder_heads",
    "vocab_size",
    "max_seq_len",
    "gat_layers",
    "gat_node_dim",
    "gat_attention_heads",
    "gat_relation_embed_dim",
    "use_graph",
    "dtype",
)


@dataclass
class TrainConfig:
    alpha1: float = 1.0
    alpha2: float = 1.0
    steps_posttrain: int = 200
    steps_finetune: int = 300
    batch_size_ha: int = 2
    batch_size_ce: int = 4
    learning_rate: float = 3e-3
    seed: int = 7
    encoder_backend: str = "toy"
    encoder_dim: int = 16
    encoder_layers: int = 2
    encoder_heads: int = 2
    vocab_size: int = 4096
    max_seq_len: int = 256
    gat_layers: int = 3
    gat_node_dim: int | None = None
    gat_attention_heads: int = 2
    gat_relation_embed_dim: int | None = None
    use_graph: bool = True
    dtype: str = "float32"
    probe_size: int = 16

    @property
    def gat(self) -> GatConfig:
        return GatConfig(
            self.gat_layers, self.gat_node_dim, self.gat_attention_heads,
            self.gat_relation_embed_dim,
        )

    def validate(self, phase: str = "posttrain") -> None:
        if self.alpha1 < 0 or self.alpha2 < 0:
            raise ValueError("loss weights must be non-negative")
        if phase == "posttrain" and not (self.alpha1 > 0 or self.alpha2 > 0):
            raise ValueError("post-training needs alpha1 > 0 or alpha2 > 0")
        if self.batch_size_ha < 1 or self.batch_size_ce < 1:
            raise ValueError("batch sizes must be >= 1")
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if self.steps_posttrain < 0 or self.steps_finetune < 0:
            raise ValueError("step counts must be >= 0")
        if self.dtype not in ("float32", "float64"):
            raise ValueError(f"unsupported dtype {self.dtype!r}")
        self.gat.resolve(self.encoder_dim)

    def to_dict(self) -> dict[str, Any]:
        return dataclasses.asdict(self)

    @classmethod
    def from_dict(cls, d: dict[str, Any]) -> TrainConfig:
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - names
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        return cls(**d)

    @classmethod
    def load(cls, path: str | os.PathLike) -> TrainConfig:
        with open(path, encoding="utf-8") as f:
            return cls.from_dict(json.load(f))

    def replace(self, **overrides) -> TrainConfig:
        return dataclasses.replace(self, **overrides)

    def arch_hash(self) -> str:
        arch = {k: getattr(self, k) for k in ARCH_FIELDS}
        return hashlib.sha256(json.dumps(arch, sort_keys=True).encode()).hexdigest()[:16]


def build_model(cfg: TrainConfig) -> StrudelModel:
    """Fresh model whose initial parameters depend only on ``cfg``."""
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(cfg.seed)
        enc = build_encoder(
            cfg.encoder_backend, seed=cfg.seed, dim=cfg.encoder_dim, layers=cfg.encoder_layers,
            heads=cfg.encoder_heads, vocab_size=cfg.vocab_size, max_seq_len=cfg.max_seq_len,
        )
        cfg = cfg.replace(encoder_dim=enc.dim) if enc.dim != cfg.encoder_dim else cfg
        model = StrudelModel(enc, cfg.gat, use_graph=cfg.use_graph)
    if cfg.dtype == "float64":
        model.double()
    return model


# ---------------------------------------------------------------------------
# objective


def annotation_targets(
    model: StrudelModel, anns: Sequence[StrudelAnnotation]
) -> list[dict[EntryKind, torch.Tensor]]:
    """Frozen-encoder targets for each annotation's non-N/A entries."""
    texts = sorted({a[k] for a in anns for k in a.present()})
    if not texts:
        return [{} for _ in anns]
    vecs = dict(zip(texts, annotation_embeddings(model.frozen, texts)))
    return [{k: vecs[a[k]] for k in a.present()} for a in anns]


def sm_term(
    model: StrudelModel,
    batch_ha: Sequence[AnnotatedDialogue],
    targets: Sequence[dict] | None = None,
) -> torch.Tensor:
    if not batch_ha:
        raise EmptyBatch("semantic matching term needs annotated dialogues")
    embs = model.entry_embeddings([d for d, _ in batch_ha])
    if targets is None:
        targets = annotation_targets(model, [a for _, a in batch_ha])
    losses = [
        semantic_matching_loss(embs[i], ann, model.frozen, targets[i])
        for i, (_, ann) in enumerate(batch_ha)
    ]
    return torch.stack(losses).mean()


def ce_term(model: StrudelModel, batch_ce: Sequence[ComprehensionExample]) -> torch.Tensor:
    if not batch_ce:
        raise EmptyBatch("cross-entropy term needs comprehension examples")
    scores = model.score_batch(batch_ce)
    return torch.stack([candidate_nll(s, ex.gold_index) for s, ex in zip(scores, batch_ce)]).mean()


def posttrain_loss(
    model: StrudelModel,
    batch_ha: Sequence[AnnotatedDialogue],
    batch_ce: Sequence[ComprehensionExample],
    cfg: TrainConfig,
    targets: Sequence[dict] | None = None,
) -> torch.Tensor:
    total = torch.zeros((), dtype=next(model.parameters()).dtype)
    if cfg.alpha1 > 0:
        total = total + cfg.alpha1 * sm_term(model, batch_ha, targets)
    if cfg.alpha2 > 0:
        total = total + cfg.alpha2 * ce_term(model, batch_ce)
    return total


# ---------------------------------------------------------------------------
# loop


class _Cycler:
    """Endless seeded reshuffling over ``range(n)``; each pool cycles on its own."""

    def __init__(self, n: int, rng: np.random.Generator):
        self.n = n
        self.rng = rng
        self.order = rng.permutation(n) if n else np.array([], dtype=int)
        self.pos = 0

    def take(self, k: int) -> list[int]:
        out = []
        while len(out) < k:
            if self.pos == self.n:
                self.order = self.rng.permutation(self.n)
                self.pos = 0
            out.append(int(self.order[self.pos]))
            self.pos += 1
        return out

    def state(self) -> dict:
        return {"order": self.order.tolist(), "pos": self.pos}

    def restore(self, state: dict) -> None:
        self.order = np.array(state["order"], dtype=int)
        self.pos = state["pos"]


@dataclass
class Checkpoint:
    config: TrainConfig
    state: dict[str, torch.Tensor]
    phase: str = "init"
    step: int = 0
    history: list[float] = field(default_factory=list)
    probe_before: float | None = None
    probe_after: float | None = None
    rng_state: dict = field(default_factory=dict)
    optimizer_state: dict | None = None

    @property
    def config_hash(self) -> str:
        return self.config.arch_hash()

    def save(self, path: str | os.PathLike) -> None:
        payload = {
            "config": self.config.to_dict(),
            "config_hash": self.config_hash,
            "state": self.state,
            "phase": self.phase,
            "step": self.step,
            "history": self.history,
            "probe_before": self.probe_before,
            "probe_after": self.probe_after,
            "rng_state": self.rng_state,
            "optimizer_state": self.optimizer_state,
        }
        path = Path(path)
        tmp = path.with_name(path.name + ".tmp")
        torch.save(payload, tmp)
        os.replace(tmp, path)

    @classmethod
    def load(cls, path: str | os.PathLike) -> Checkpoint:
        payload = torch.load(path, weights_only=False)
        cfg = TrainConfig.from_dict(payload["config"])
        if cfg.arch_hash() != payload["config_hash"]:
            raise CheckpointMismatch(f"{path}: stored config hash does not match its config")
        return cls(
            cfg, payload["state"], payload["phase"], payload["step"], payload["history"],
            payload["probe_before"], payload["probe_after"], payload["rng_state"],
            payload["optimizer_state"],
        )

    def build(self, cfg: TrainConfig | None = None) -> StrudelModel:
        """Instantiate the stored model; ``cfg`` (if given) must share its architecture."""
        if cfg is not None and cfg.arch_hash() != self.config_hash:
            raise CheckpointMismatch(
                f"config hash {cfg.arch_hash()} incompatible with checkpoint {self.config_hash}"
            )
        model = build_model(self.config)
        model.load_state_dict(self.state)
        return model


@dataclass
class TrainResult:
    model: StrudelModel
    checkpoint: Checkpoint


def _state_copy(model: StrudelModel) -> dict[str, torch.Tensor]:
    return {k: v.detach().clone() for k, v in model.state_dict().items()}


@torch.no_grad()
def probe_loss(model, probe_ha, probe_ce, cfg, targets=None) -> float:
    return float(posttrain_loss(model, probe_ha, probe_ce, cfg, targets))


def posttrain(
    model: StrudelModel,
    annotated: Sequence[AnnotatedDialogue],
    examples: Sequence[ComprehensionExample],
    cfg: TrainConfig,
    resume: Checkpoint | None = None,
) -> TrainResult:
    """Multi-task post-training; mutates ``model`` and returns it with a checkpoint.

    The frozen encoder is snapshotted once, before the first step (and kept
    as-is when resuming).
    """
    cfg.validate("posttrain")
    if cfg.alpha1 > 0 and not annotated:
        raise EmptyBatch("post-training with alpha1 > 0 needs annotated dialogues")
    if cfg.alpha2 > 0 and not examples:
        raise EmptyBatch("post-training with alpha2 > 0 needs comprehension examples")
    if resume is None:
        model.snapshot_frozen()
    else:
        model.load_state_dict(resume.state)
    return _run(model, cfg, "posttrain", cfg.steps_posttrain, annotated, examples, resume)


def finetune(
    checkpoint: Checkpoint,
    examples: Sequence[ComprehensionExample],
    cfg: TrainConfig,
) -> TrainResult:
    """Cross-entropy-only training on one task, starting from ``checkpoint``."""
    cfg.validate("finetune")
    if not examples:
        raise EmptyBatch("fine-tuning needs examples")
    model = checkpoint.build(cfg)
    ce_cfg = cfg.replace(alpha1=0.0, alpha2=1.0)
    result = _run(model, ce_cfg, "finetune", cfg.steps_finetune, [], examples, None)
    result.checkpoint.config = cfg
    return result


def _run(model, cfg, phase, steps, annotated, examples, resume) -> TrainResult:
    model.train()
    torch.manual_seed(cfg.seed)
    rng = np.random.default_rng(cfg.seed)
    ha_cycle = _Cycler(len(annotated), rng)
    ce_cycle = _Cycler(len(examples), rng)
    params = model.trainable_parameters()
    opt = torch.optim.Adam(params, lr=cfg.learning_rate)
    history: list[float] = []
    start = 0
    if resume is not None:
        opt.load_state_dict(resume.optimizer_state)
        rng.bit_generator.state = resume.rng_state["numpy"]
        torch.set_rng_state(resume.rng_state["torch"])
        ha_cycle.restore(resume.rng_state["ha"])
        ce_cycle.restore(resume.rng_state["ce"])
        history = list(resume.history)
        start = resume.step

    targets = annotation_targets(model, [a for _, a in annotated]) if cfg.alpha1 > 0 else None
    probe_ha = list(annotated[: cfg.probe_size])
    probe_ce = list(examples[: cfg.probe_size])
    probe_t = targets[: cfg.probe_size] if targets else None
    before = probe_loss(model, probe_ha, probe_ce, cfg, probe_t)

    for step in range(start, steps):
        hi = ha_cycle.take(cfg.batch_size_ha) if cfg.alpha1 > 0 else []
        ci = ce_cycle.take(cfg.batch_size_ce) if cfg.alpha2 > 0 else []
        loss = posttrain_loss(
            model,
            [annotated[i] for i in hi],
            [examples[i] for i in ci],
            cfg,
            [targets[i] for i in hi] if targets else None,
        )
        opt.zero_grad()
        loss.backward()
        opt.step()
        history.append(float(loss.detach()))
        if (step + 1) % 50 == 0:
            log.info("%s step %d loss %.4f", phase, step + 1, history[-1])

    after = probe_loss(model, probe_ha, probe_ce, cfg, probe_t)
    model.eval()
    ckpt = Checkpoint(
        config=cfg,
        state=_state_copy(model),
        phase=phase,
        step=max(steps, start),
        history=history,
        probe_before=before if resume is None else resume.probe_before,
        probe_after=after,
        rng_state={
            "numpy": rng.bit_generator.state,
            "torch": torch.get_rng_state(),
            "ha": ha_cycle.state(),
            "ce": ce_cycle.state(),
        },
        optimizer_state=copy.deepcopy(opt.state_dict()),
    )
    return TrainResult(model, ckpt)


def initial_checkpoint(model: StrudelModel, cfg: TrainConfig) -> Checkpoint:
    return Checkpoint(cfg, _state_copy(model))


@torch.no_grad()
def train_accuracy(model: StrudelModel, examples: Sequence[ComprehensionExample]) -> float:
    scores = model.score_examples(examples)
    hits = sum(predicted_index(s) == ex.gold_index for s, ex in zip(scores, examples))
    return hits / len(examples)
