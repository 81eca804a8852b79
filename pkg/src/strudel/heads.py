"""Per-entry projection heads and the semantic matching loss.

A head turns the CLS state of an entry query into that entry's summary
embedding.  Training pulls each embedding toward the frozen encoding of the
human-written entry text by cosine similarity; N/A entries contribute
nothing.
"""

from __future__ import annotations

from collections.abc import Mapping, Sequence

import torch
from torch import nn

from strudel.corpus import ENTRY_KINDS, Dialogue, EntryKind, StrudelAnnotation
from strudel.encoder import EncoderMode, TextEncoder
from strudel.errors import DimMismatch, EmptyText, FrozenRequired, ZeroVector
from strudel.prompting import build_entry_query, build_text_query

StrudelEmbeddingSet = Mapping[EntryKind, torch.Tensor]


class EntryHead(nn.Module):
    def __init__(self, dim: int, activation: nn.Module | None = None):
        super().__init__()
        self.dim = dim
        self.fc1 = nn.Linear(dim, dim)
        self.act = activation if activation is not None else nn.GELU()
        self.fc2 = nn.Linear(dim, dim)

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        return self.fc2(self.act(self.fc1(x)))


class StrudelHeads(nn.Module):
    """Seven independent heads, keyed by entry name in checkpoints."""

    def __init__(self, dim: int, activation: type[nn.Module] | None = None):
        super().__init__()
        self.dim = dim
        self.heads = nn.ModuleDict(
            {k.value: EntryHead(dim, activation() if activation else None) for k in ENTRY_KINDS}
        )

    def __getitem__(self, kind: EntryKind) -> EntryHead:
        return self.heads[kind.value]

    def forward(self, cls: torch.Tensor) -> torch.Tensor:
        """Map stacked CLS states (..., 7, dim) to embeddings of the same shape."""
        return torch.stack([self[k](cls[..., i, :]) for i, k in enumerate(ENTRY_KINDS)], dim=-2)


def entry_embeddings(
    enc: TextEncoder, heads: StrudelHeads, dialogues: Sequence[Dialogue]
) -> torch.Tensor:
    """Batched embeddings, shape (n_dialogues, 7, dim)."""
    if heads.dim != enc.dim:
        raise DimMismatch(f"heads dim {heads.dim} != encoder dim {enc.dim}")
    queries = [build_entry_query(d, k) for d in dialogues for k in ENTRY_KINDS]
    cls = enc.encode_cls(queries).view(len(dialogues), len(ENTRY_KINDS), enc.dim)
    return heads(cls)


def generate_strudel_embeddings(
    enc: TextEncoder, heads: StrudelHeads, d: Dialogue
) -> dict[EntryKind, torch.Tensor]:
    out = entry_embeddings(enc, heads, [d])[0]
    return {k: out[i] for i, k in enumerate(ENTRY_KINDS)}


def _require_frozen(enc: TextEncoder) -> None:
    if enc.mode is not EncoderMode.FROZEN:
        raise FrozenRequired("expected a frozen encoder snapshot")


def annotation_embeddings(frozen: TextEncoder, texts: Sequence[str]) -> torch.Tensor:
    _require_frozen(frozen)
    for t in texts:
        if t is None or not t.strip():
            raise EmptyText("annotation text must be non-empty (N/A entries are never encoded)")
    return frozen.encode_cls([build_text_query(t) for t in texts]).detach()


def annotation_embedding(frozen: TextEncoder, text: str) -> torch.Tensor:
    return annotation_embeddings(frozen, [text])[0]


def cosine(a: torch.Tensor, b: torch.Tensor) -> torch.Tensor:
    """Cosine along the last axis; raises instead of smoothing zero norms."""
    na = a.norm(dim=-1)
    nb = b.norm(dim=-1)
    if bool((na == 0).any()) or bool((nb == 0).any()):
        raise ZeroVector("cosine similarity of a zero-norm vector is undefined")
    return (a * b).sum(-1) / (na * nb)


def semantic_matching_loss(
    embs: StrudelEmbeddingSet | torch.Tensor,
    ann: StrudelAnnotation,
    frozen: TextEncoder,
    targets: Mapping[EntryKind, torch.Tensor] | None = None,
) -> torch.Tensor:
    """Negative summed cosine between generated and annotated entry embeddings.

    ``embs`` is either a kind->vector mapping or a (7, dim) tensor in
    canonical order.  ``targets`` may supply precomputed frozen annotation
    embeddings.
    """
    present = ann.present()
    if isinstance(embs, torch.Tensor):
        rows = {k: embs[i] for i, k in enumerate(ENTRY_KINDS)}
    else:
        rows = dict(embs)
    if not present:
        ref = next(iter(rows.values()))
        return (ref * 0).sum()
    if targets is None:
        tgt = annotation_embeddings(frozen, [ann[k] for k in present])
    else:
        tgt = torch.stack([targets[k] for k in present])
    gen = torch.stack([rows[k] for k in present])
    if gen.shape[-1] != tgt.shape[-1]:
        raise DimMismatch(f"embedding dim {gen.shape[-1]} != annotation dim {tgt.shape[-1]}")
    return -cosine(gen, tgt).sum()
