from collections import Counter

import pytest
import torch
from hypothesis import given, settings
from hypothesis import strategies as st

from strudel.corpus import ENTRY_KINDS, EntryKind
from strudel.encoder import freeze_snapshot, toy_encoder
from strudel.errors import DimMismatch, FrozenRequired
from strudel.graph import (
    EDGES,
    NODE_ORDER,
    NodeKind,
    RelationType,
    build_graph,
    edge_tensors,
    entry_node,
    parse_edge_list,
    speaker_embeddings,
    to_edge_list,
)


def random_graph(seed: int, dim: int = 6):
    g = torch.Generator().manual_seed(seed)
    vecs = torch.randn(10, dim, generator=g)
    return build_graph(vecs[0], vecs[1], vecs[2], {k: vecs[3 + i] for i, k in enumerate(ENTRY_KINDS)})


def test_counts():
    graph = random_graph(0)
    assert len(graph.nodes) == 10 and len(graph.edges) == 21
    counts = graph.relation_counts()
    assert counts[RelationType.CONTEXT_LINK] == 9
    for rel in RelationType:
        if rel is not RelationType.CONTEXT_LINK:
            assert counts[rel] == 2


def test_degrees():
    graph = random_graph(0)
    assert graph.degree(NodeKind.CONTEXT) == 9
    assert graph.degree(NodeKind.SPEAKER1) == 7
    assert graph.degree(NodeKind.SPEAKER2) == 7
    assert graph.degree(NodeKind.TASK_INTENTION_S1) == 2
    assert graph.degree(NodeKind.TASK_INTENTION_S2) == 2
    assert graph.degree(NodeKind.SOLUTION) == 3


def test_no_self_loops_or_duplicates():
    pairs = [frozenset((s, d)) for s, d, _ in EDGES]
    assert all(len(p) == 2 for p in pairs)
    assert max(Counter(pairs).values()) == 1


def test_intention_wiring():
    assert (NodeKind.SPEAKER1, NodeKind.TASK_INTENTION_S1, RelationType.WITH_INTENTION) in EDGES
    assert (NodeKind.SPEAKER2, NodeKind.TASK_INTENTION_S2, RelationType.WITH_INTENTION) in EDGES
    assert entry_node(EntryKind.SOLUTION) is NodeKind.SOLUTION
    assert NODE_ORDER[0] is NodeKind.CONTEXT


@settings(max_examples=100)
@given(st.integers(0, 2**31 - 1), st.integers(1, 12))
def test_topology_independent_of_features(seed, dim):
    graph = random_graph(seed, dim)
    assert graph.edges == EDGES
    assert graph.features().shape == (10, dim)


def test_edge_tensors_both_directions():
    src, dst, rel = edge_tensors()
    assert src.numel() == 42
    pairs = set(zip(src.tolist(), dst.tolist()))
    assert all((d, s) in pairs for s, d in pairs)


def test_edge_list_round_trip():
    text = to_edge_list(random_graph(1))
    assert len(text.splitlines()) == 21
    assert parse_edge_list(text) == EDGES


def test_dim_mismatch():
    v = torch.zeros(4)
    embs = {k: torch.zeros(4) for k in ENTRY_KINDS}
    embs[EntryKind.SOLUTION] = torch.zeros(5)
    with pytest.raises(DimMismatch):
        build_graph(v, v, v, embs)


def test_speaker_embeddings():
    enc = toy_encoder(0, 16)
    with pytest.raises(FrozenRequired):
        speaker_embeddings(enc)
    s1, s2 = speaker_embeddings(freeze_snapshot(enc))
    assert s1.shape == (16,) and not torch.allclose(s1, s2)
