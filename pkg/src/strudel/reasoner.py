"""Graph-attention reasoning over the joint graph, candidate scoring and the full model.

Each layer lets every node attend over its incoming messages.  The key and
value of a message are computed from the sender state concatenated with the
edge's relation embedding, so the attention logit depends on the relation.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import dataclass

import torch
import torch.nn.functional as F
from torch import nn

from strudel.corpus import ENTRY_KINDS, ComprehensionExample, Dialogue
from strudel.encoder import TextEncoder, freeze_snapshot
from strudel.errors import DimMismatch
from strudel.graph import (
    NODE_ORDER,
    DialogueSemanticGraph,
    RelationType,
    edge_tensors,
    speaker_embeddings,
)
from strudel.heads import StrudelHeads, entry_embeddings
from strudel.prompting import build_context_query


@dataclass(frozen=True)
class GatConfig:
    layers: int = 3
    node_dim: int | None = None
    attention_heads: int = 2
    relation_embed_dim: int | None = None

    def resolve(self, encoder_dim: int) -> GatConfig:
        """Fill unset sizes: node_dim = encoder_dim/2, relation dim = node_dim/2."""
        node_dim = self.node_dim or max(encoder_dim // 2, self.attention_heads)
        rel = self.relation_embed_dim or max(node_dim // 2, 1)
        cfg = GatConfig(self.layers, node_dim, self.attention_heads, rel)
        cfg.validate()
        return cfg

    def validate(self) -> None:
        if self.layers < 0:
            raise ValueError("layers must be >= 0")
        if self.attention_heads < 1 or (self.node_dim or 0) < 1:
            raise ValueError("node_dim and attention_heads must be positive")
        if self.node_dim % self.attention_heads:
            raise ValueError(
                f"node_dim {self.node_dim} not divisible by {self.attention_heads} heads"
            )


def segment_softmax(logits: torch.Tensor, dst: torch.Tensor, n_nodes: int) -> torch.Tensor:
    """Softmax of per-edge logits (B, E, H) over the edges sharing a target node."""
    b, e, h = logits.shape
    idx = dst.view(1, e, 1).expand(b, e, h)
    peak = torch.full((b, n_nodes, h), float("-inf"), dtype=logits.dtype)
    peak = peak.scatter_reduce(1, idx, logits.detach(), reduce="amax", include_self=True)
    ex = torch.exp(logits - peak.gather(1, idx))
    denom = torch.zeros((b, n_nodes, h), dtype=logits.dtype).index_add(1, dst, ex)
    return ex / denom.gather(1, idx)


class RelationalGATLayer(nn.Module):
    def __init__(self, dim: int, heads: int, relation_dim: int):
        super().__init__()
        self.heads = heads
        self.query = nn.Linear(dim, dim)
        self.key = nn.Linear(dim + relation_dim, dim)
        self.value = nn.Linear(dim + relation_dim, dim)
        self.out = nn.Linear(dim, dim)
        self.skip = nn.Linear(dim, dim)

    def forward(self, x, src, dst, rel_vecs, return_attention: bool = False):
        b, n, d = x.shape
        e, dh = src.numel(), d // self.heads
        sender = torch.cat([x[:, src], rel_vecs.expand(b, e, -1)], dim=-1)
        q = self.query(x)[:, dst].view(b, e, self.heads, dh)
        k = self.key(sender).view(b, e, self.heads, dh)
        v = self.value(sender).view(b, e, self.heads, dh)
        alpha = segment_softmax((q * k).sum(-1) / math.sqrt(dh), dst, n)
        agg = torch.zeros((b, n, self.heads, dh), dtype=x.dtype)
        agg = agg.index_add(1, dst, alpha.unsqueeze(-1) * v).reshape(b, n, d)
        h = F.gelu(self.out(agg) + self.skip(x))
        return (h, alpha) if return_attention else h


class Reasoner(nn.Module):
    """Role projections, L relational GAT layers and the scoring readout."""

    def __init__(self, encoder_dim: int, cfg: GatConfig):
        super().__init__()
        cfg = cfg.resolve(encoder_dim)
        self.cfg = cfg
        self.encoder_dim = encoder_dim
        nd = cfg.node_dim
        self.proj_context = nn.Linear(encoder_dim, nd, bias=False)
        self.proj_speaker = nn.Linear(encoder_dim, nd, bias=False)
        self.proj_entry = nn.Linear(encoder_dim, nd, bias=False)
        self.relations = nn.Embedding(len(RelationType), cfg.relation_embed_dim)
        self.layers = nn.ModuleList(
            RelationalGATLayer(nd, cfg.attention_heads, cfg.relation_embed_dim)
            for _ in range(cfg.layers)
        )
        self.readout = nn.Sequential(
            nn.Linear(self.readout_width, nd), nn.GELU(), nn.Linear(nd, 1)
        )
        src, dst, rel = edge_tensors()
        self.register_buffer("src", src, persistent=False)
        self.register_buffer("dst", dst, persistent=False)
        self.register_buffer("rel", rel, persistent=False)

    @property
    def readout_width(self) -> int:
        return self.encoder_dim + 2 * self.cfg.node_dim

    def project_nodes(self, v_context, v_s1, v_s2, embs) -> torch.Tensor:
        """Project raw vectors to node states stacked in ``NODE_ORDER``: (..., 10, node_dim).

        ``embs`` is a (..., 7, encoder_dim) tensor in canonical entry order.
        """
        for v in (v_context, v_s1, v_s2, embs):
            if v.shape[-1] != self.encoder_dim:
                raise DimMismatch(f"expected dim {self.encoder_dim}, got {v.shape[-1]}")
        lead = v_context.shape[:-1]
        spk = self.proj_speaker(torch.stack([v_s1, v_s2], dim=-2).expand(*lead, 2, -1))
        ent = self.proj_entry(embs).expand(*lead, len(ENTRY_KINDS), -1)
        return torch.cat([self.proj_context(v_context).unsqueeze(-2), spk, ent], dim=-2)

    def propagate(
        self, x: torch.Tensor, src=None, dst=None, rel=None, return_attention: bool = False
    ):
        """Run the GAT layers on node states (B, N, node_dim).

        Edge lists default to the joint-graph topology in ``NODE_ORDER``.
        """
        src = self.src if src is None else src
        dst = self.dst if dst is None else dst
        rel_vecs = self.relations(self.rel if rel is None else rel)
        attention = []
        for layer in self.layers:
            x, alpha = layer(x, src, dst, rel_vecs, return_attention=True)
            attention.append(alpha)
        return (x, attention) if return_attention else x

    def score(self, v_context: torch.Tensor, nodes: torch.Tensor) -> torch.Tensor:
        """Readout over [context vector; final context node; mean of the other 9 nodes]."""
        ctx = nodes[..., 0, :]  # NODE_ORDER starts with the context node
        pool = nodes[..., 1:, :].mean(dim=-2)
        return self.readout(torch.cat([v_context, ctx, pool], dim=-1)).squeeze(-1)

    def forward(self, v_context, v_s1, v_s2, embs) -> torch.Tensor:
        x = self.project_nodes(v_context, v_s1, v_s2, embs)
        squeeze = x.dim() == 2
        if squeeze:
            x = x.unsqueeze(0)
        x = self.propagate(x)
        if squeeze:
            x = x.squeeze(0)
        return self.score(v_context, x)


def gat_forward(graph: DialogueSemanticGraph, reasoner: Reasoner) -> dict:
    """Message passing on an already-projected graph; returns final state per node."""
    x = graph.features()
    if x.shape[-1] != reasoner.cfg.node_dim:
        raise DimMismatch(f"graph features have dim {x.shape[-1]}, expected node_dim")
    src, dst, rel = edge_tensors(graph.edges)
    out = reasoner.propagate(x.unsqueeze(0), src, dst, rel)[0]
    return {n: out[i] for i, n in enumerate(NODE_ORDER)}


class ContextReadout(nn.Module):
    """Ablation scorer: MLP over the context vector alone."""

    def __init__(self, encoder_dim: int, hidden: int):
        super().__init__()
        self.readout = nn.Sequential(nn.Linear(encoder_dim, hidden), nn.GELU(), nn.Linear(hidden, 1))

    def forward(self, v_context: torch.Tensor) -> torch.Tensor:
        return self.readout(v_context).squeeze(-1)


class StrudelModel(nn.Module):
    """Encoder, entry heads, frozen snapshot and reasoner in one module.

    With ``use_graph=False`` candidates are scored from the context vector
    only (the heads remain so the matching loss can still be trained).
    """

    def __init__(
        self,
        encoder: TextEncoder,
        gat: GatConfig = GatConfig(),
        use_graph: bool = True,
        head_activation: type[nn.Module] | None = None,
    ):
        super().__init__()
        self.encoder = encoder
        self.heads = StrudelHeads(encoder.dim, head_activation)
        self.use_graph = use_graph
        self.gat = gat.resolve(encoder.dim)
        if use_graph:
            self.reasoner: nn.Module = Reasoner(encoder.dim, self.gat)
        else:
            self.reasoner = ContextReadout(encoder.dim, self.gat.node_dim)
        self.frozen = freeze_snapshot(encoder)
        self._speakers: tuple[torch.Tensor, torch.Tensor] | None = None

    def snapshot_frozen(self) -> None:
        """Replace the frozen encoder with a fresh copy of the current encoder."""
        self.frozen = freeze_snapshot(self.encoder)
        self._speakers = None

    def trainable_parameters(self) -> list[nn.Parameter]:
        return [p for p in self.parameters() if p.requires_grad]

    def speaker_embeddings(self) -> tuple[torch.Tensor, torch.Tensor]:
        if self._speakers is None:
            self._speakers = speaker_embeddings(self.frozen)
        return self._speakers

    def load_state_dict(self, *args, **kwargs):
        self._speakers = None
        return super().load_state_dict(*args, **kwargs)

    def _apply(self, fn, *args, **kwargs):
        self._speakers = None
        return super()._apply(fn, *args, **kwargs)

    def entry_embeddings(self, dialogues: Sequence[Dialogue]) -> torch.Tensor:
        return entry_embeddings(self.encoder, self.heads, dialogues)

    def score_batch(self, examples: Sequence[ComprehensionExample]) -> list[torch.Tensor]:
        """Differentiable raw scores, one (n_candidates,) tensor per example."""
        queries, owner = [], []
        for i, ex in enumerate(examples):
            for a in ex.candidates:
                queries.append(build_context_query(ex.dialogue, ex.question, a))
                owner.append(i)
        v_ctx = self.encoder.encode_cls(queries)
        if self.use_graph:
            uniq = list(dict.fromkeys(ex.dialogue for ex in examples))
            pos = {d: j for j, d in enumerate(uniq)}
            embs = self.entry_embeddings(uniq)
            rows = torch.tensor([pos[examples[i].dialogue] for i in owner])
            s1, s2 = self.speaker_embeddings()
            scores = self.reasoner(v_ctx, s1, s2, embs[rows])
        else:
            scores = self.reasoner(v_ctx)
        return list(scores.split([len(ex.candidates) for ex in examples]))

    def score_candidate(self, d: Dialogue, q: str | None, a: str) -> torch.Tensor:
        v_ctx = self.encoder.encode_cls([build_context_query(d, q, a)])[0]
        if not self.use_graph:
            return self.reasoner(v_ctx)
        s1, s2 = self.speaker_embeddings()
        return self.reasoner(v_ctx, s1, s2, self.entry_embeddings([d])[0])

    def predict(self, example: ComprehensionExample) -> torch.Tensor:
        return torch.softmax(self.score_batch([example])[0], dim=-1)

    @torch.no_grad()
    def score_examples(
        self, examples: Sequence[ComprehensionExample], batch_size: int = 16
    ) -> list[list[float]]:
        out: list[list[float]] = []
        for i in range(0, len(examples), batch_size):
            out += [s.tolist() for s in self.score_batch(examples[i : i + batch_size])]
        return out


def predict(model: StrudelModel, example: ComprehensionExample) -> torch.Tensor:
    return model.predict(example)


def predicted_index(dist: torch.Tensor | Sequence[float]) -> int:
    """Argmax with ties resolved toward the lowest index."""
    vals = dist.tolist() if isinstance(dist, torch.Tensor) else list(dist)
    return max(range(len(vals)), key=lambda i: (vals[i], -i))


def cross_entropy_loss(dist: torch.Tensor, gold_index: int) -> torch.Tensor:
    if not 0 <= gold_index < dist.shape[-1]:
        raise IndexError(f"gold index {gold_index} outside {dist.shape[-1]} candidates")
    return -torch.log(dist[gold_index])


def candidate_nll(scores: torch.Tensor, gold_index: int) -> torch.Tensor:
    """Cross-entropy straight from raw scores (log-softmax form, numerically stable)."""
    if not 0 <= gold_index < scores.shape[-1]:
        raise IndexError(f"gold index {gold_index} outside {scores.shape[-1]} candidates")
    return -torch.log_softmax(scores, dim=-1)[gold_index]
