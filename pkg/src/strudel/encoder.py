"""Contextual text encoders.

Every backend maps a :class:`QuerySequence` to last-layer hidden states and
exposes the position-0 state as the CLS vector.  ``ToyEncoder`` is a small
hashed-vocabulary transformer that is always available and fully
deterministic; ``HFEncoder`` wraps a pretrained ``transformers`` model.
"""

from __future__ import annotations

import contextlib
import copy
import enum
import math
import re
import zlib
from dataclasses import dataclass
from typing import Sequence

import torch
from torch import nn

from strudel.errors import EmptyQuery
from strudel.prompting import QuerySequence

_TOKEN_RE = re.compile(r"\w+|[^\w\s]")

PAD, CLS, SEP, EOS = 0, 1, 2, 3
N_SPECIAL = 4


class EncoderMode(enum.Enum):
    TRAINABLE = "trainable"
    FROZEN = "frozen"


@dataclass
class EncodedSequence:
    hidden: torch.Tensor  # (seq_len, dim)

    @property
    def cls(self) -> torch.Tensor:
        return self.hidden[0]


class TextEncoder(nn.Module):
    """Base class: subclasses implement ``forward_queries``."""

    dim: int
    _frozen: bool = False

    @property
    def mode(self) -> EncoderMode:
        return EncoderMode.FROZEN if self._frozen else EncoderMode.TRAINABLE

    def forward_queries(self, queries: Sequence[QuerySequence]) -> tuple[torch.Tensor, torch.Tensor]:
        """Return padded hidden states (B, T, dim) and a validity mask (B, T)."""
        raise NotImplementedError

    def encode_cls(self, queries: Sequence[QuerySequence]) -> torch.Tensor:
        if not queries:
            raise EmptyQuery("no queries to encode")
        if self._frozen:
            with torch.no_grad():
                hidden, _ = self.forward_queries(queries)
        else:
            hidden, _ = self.forward_queries(queries)
        return hidden[:, 0]

    def train(self, mode: bool = True):
        # A frozen snapshot never leaves eval mode.
        return super().train(mode and not self._frozen)


def encode(enc: TextEncoder, q: QuerySequence) -> EncodedSequence:
    if q is None or not q.payloads:
        raise EmptyQuery("query has no payload")
    ctx = torch.no_grad() if enc.mode is EncoderMode.FROZEN else contextlib.nullcontext()
    with ctx:
        hidden, mask = enc.forward_queries([q])
    return EncodedSequence(hidden[0, : int(mask[0].sum())])


def freeze_snapshot(enc: TextEncoder) -> TextEncoder:
    """Deep, gradient-free copy of ``enc``; later updates to ``enc`` do not reach it."""
    snap = copy.deepcopy(enc)
    snap.requires_grad_(False)
    snap._frozen = True
    snap.eval()
    return snap


# ---------------------------------------------------------------------------
# toy backend


def word_tokens(text: str) -> list[str]:
    return _TOKEN_RE.findall(text.lower())


def hash_token(token: str, vocab_size: int) -> int:
    return N_SPECIAL + zlib.crc32(token.encode("utf-8")) % vocab_size


def _fit_payloads(payload_ids: list[list[int]], max_len: int) -> list[list[int]]:
    """Trim payload token lists so that markers plus payloads fit ``max_len``.

    The first payload (the dialogue) loses its oldest tokens first; later
    payloads are never cut.  A lone payload keeps its head.
    """
    budget = max_len - (len(payload_ids) + 1)
    total = sum(len(p) for p in payload_ids)
    if total <= budget:
        return payload_ids
    if len(payload_ids) == 1:
        return [payload_ids[0][:budget]]
    rest = sum(len(p) for p in payload_ids[1:])
    keep = budget - rest
    if keep < 1:
        raise ValueError(
            f"question/candidate payloads need {rest} tokens; max_seq_len={max_len} is too small"
        )
    return [payload_ids[0][-keep:], *payload_ids[1:]]


class _Block(nn.Module):
    def __init__(self, dim: int, heads: int):
        super().__init__()
        self.heads = heads
        self.ln1 = nn.LayerNorm(dim)
        self.qkv = nn.Linear(dim, 3 * dim)
        self.proj = nn.Linear(dim, dim)
        self.ln2 = nn.LayerNorm(dim)
        self.ff = nn.Sequential(nn.Linear(dim, 2 * dim), nn.GELU(), nn.Linear(2 * dim, dim))

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        b, t, d = x.shape
        dh = d // self.heads
        q, k, v = self.qkv(self.ln1(x)).split(d, dim=-1)
        q, k, v = (z.view(b, t, self.heads, dh).transpose(1, 2) for z in (q, k, v))
        att = (q @ k.transpose(-1, -2)) / math.sqrt(dh)
        att = att.masked_fill(~mask[:, None, None, :], float("-inf")).softmax(-1)
        x = x + self.proj((att @ v).transpose(1, 2).reshape(b, t, d))
        return x + self.ff(self.ln2(x))


class ToyEncoder(TextEncoder):
    """Hashed-vocabulary transformer encoder for desk-scale runs and tests."""

    def __init__(
        self,
        dim: int = 16,
        layers: int = 2,
        heads: int = 2,
        vocab_size: int = 4096,
        max_seq_len: int = 256,
    ):
        super().__init__()
        if dim < 4 or dim % heads:
            raise ValueError(f"dim must be >= 4 and divisible by heads, got {dim}/{heads}")
        self.dim = dim
        self.vocab_size = vocab_size
        self.max_seq_len = max_seq_len
        self.tok = nn.Embedding(N_SPECIAL + vocab_size, dim)
        self.pos = nn.Embedding(max_seq_len, dim)
        self.seg = nn.Embedding(4, dim)
        self.blocks = nn.ModuleList(_Block(dim, heads) for _ in range(layers))
        self.ln = nn.LayerNorm(dim)
        self._reset_embeddings()
        self._cache: dict[QuerySequence, tuple[list[int], list[int]]] = {}

    @torch.no_grad()
    def _reset_embeddings(self) -> None:
        # Word vectors stay unit-normal; markers, positions and segments start
        # small so the CLS state is driven by content rather than by position.
        for table in (self.pos.weight, self.seg.weight, self.tok.weight[:N_SPECIAL]):
            table.normal_(0.0, 0.02)

    def token_ids(self, q: QuerySequence) -> tuple[list[int], list[int]]:
        """Token ids and segment ids for one query (memoised; queries are immutable)."""
        hit = self._cache.get(q)
        if hit is not None:
            return hit
        payloads = [[hash_token(w, self.vocab_size) for w in word_tokens(p)] for p in q.payloads]
        payloads = _fit_payloads(payloads, self.max_seq_len)
        ids, segs = [CLS], [0]
        for i, p in enumerate(payloads):
            ids += p + [SEP if i < len(payloads) - 1 else EOS]
            segs += [min(i, 3)] * (len(p) + 1)
        if len(self._cache) > 50_000:
            self._cache.clear()
        self._cache[q] = (ids, segs)
        return ids, segs

    def forward_queries(self, queries):
        rows = [self.token_ids(q) for q in queries]
        t = max(len(r[0]) for r in rows)
        ids = torch.full((len(rows), t), PAD, dtype=torch.long)
        segs = torch.zeros((len(rows), t), dtype=torch.long)
        for i, (r, s) in enumerate(rows):
            ids[i, : len(r)] = torch.tensor(r)
            segs[i, : len(s)] = torch.tensor(s)
        mask = ids != PAD
        x = self.tok(ids) + self.pos(torch.arange(t))[None] + self.seg(segs)
        for blk in self.blocks:
            x = blk(x, mask)
        return self.ln(x), mask


def toy_encoder(seed: int, dim: int, **kwargs) -> ToyEncoder:
    if dim < 4:
        raise ValueError("toy encoder needs dim >= 4")
    with torch.random.fork_rng(devices=[]):
        torch.manual_seed(seed)
        return ToyEncoder(dim=dim, **kwargs)


# ---------------------------------------------------------------------------
# pretrained backend


class HFEncoder(TextEncoder):
    """A ``transformers`` encoder (BERT, RoBERTa, ...) behind the query interface.

    CLS maps to the tokenizer's leading special token and EOS to its
    sequence-final one; SEP between later payloads uses ``sep_token``.
    """

    def __init__(self, name_or_path: str, max_seq_len: int = 256):
        super().__init__()
        from transformers import AutoModel, AutoTokenizer

        self.name_or_path = name_or_path
        self.tokenizer = AutoTokenizer.from_pretrained(name_or_path)
        self.tokenizer.truncation_side = "left"
        self.model = AutoModel.from_pretrained(name_or_path)
        self.dim = self.model.config.hidden_size
        self.max_seq_len = max_seq_len

    def forward_queries(self, queries):
        firsts, seconds = [], []
        for q in queries:
            p = q.payloads
            firsts.append(p[0])
            rest = f" {self.tokenizer.sep_token} ".join(p[1:])
            seconds.append(rest or None)
        if all(s is None for s in seconds):
            batch = self.tokenizer(
                firsts, padding=True, truncation=True, max_length=self.max_seq_len,
                return_tensors="pt",
            )
        else:
            batch = self.tokenizer(
                firsts, [s or "" for s in seconds], padding=True, truncation="only_first",
                max_length=self.max_seq_len, return_tensors="pt",
            )
        out = self.model(**batch)
        return out.last_hidden_state, batch["attention_mask"].bool()


def build_encoder(
    backend: str,
    *,
    seed: int,
    dim: int = 16,
    layers: int = 2,
    heads: int = 2,
    vocab_size: int = 4096,
    max_seq_len: int = 256,
) -> TextEncoder:
    """Construct an encoder from a backend name: ``toy`` or ``hf:<name-or-path>``."""
    if backend == "toy":
        return toy_encoder(seed, dim, layers=layers, heads=heads, vocab_size=vocab_size,
                           max_seq_len=max_seq_len)
    if backend.startswith("hf:"):
        return HFEncoder(backend[3:], max_seq_len=max_seq_len)
    raise ValueError(f"unknown encoder backend {backend!r}")


__all__ = [
    "EncodedSequence",
    "EncoderMode",
    "HFEncoder",
    "TextEncoder",
    "ToyEncoder",
    "build_encoder",
    "encode",
    "freeze_snapshot",
    "toy_encoder",
]
