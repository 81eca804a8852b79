"""Dialogue semantic graph: two speakers, seven entry nodes and a context node.

Topology is fixed; only node features vary between dialogues.  Edges are
stored once and traversed in both directions during message passing.
"""

from __future__ import annotations

import enum
from collections import Counter
from collections.abc import Mapping
from dataclasses import dataclass

import torch

from strudel.corpus import ENTRY_KINDS, EntryKind
from strudel.encoder import EncoderMode, TextEncoder
from strudel.errors import DimMismatch, FrozenRequired
from strudel.prompting import build_text_query

SPEAKER_SENTENCES = (
    "The first speaker of this dialogue.",
    "The second speaker of this dialogue.",
)


class NodeKind(enum.Enum):
    CONTEXT = "context"
    SPEAKER1 = "speaker1"
    SPEAKER2 = "speaker2"
    RELATIONSHIP = EntryKind.RELATIONSHIP.value
    PURPOSE_THEME = EntryKind.PURPOSE_THEME.value
    TASK_INTENTION_S1 = EntryKind.TASK_INTENTION_S1.value
    TASK_INTENTION_S2 = EntryKind.TASK_INTENTION_S2.value
    PROBLEM_DISAGREEMENT = EntryKind.PROBLEM_DISAGREEMENT.value
    SOLUTION = EntryKind.SOLUTION.value
    CONCLUSION_AGREEMENT = EntryKind.CONCLUSION_AGREEMENT.value

    @property
    def entry(self) -> EntryKind | None:
        try:
            return EntryKind(self.value)
        except ValueError:
            return None


def entry_node(kind: EntryKind) -> NodeKind:
    return NodeKind(kind.value)


# Index order used by tensor code: context, speakers, then entries (a)-(g).
NODE_ORDER: tuple[NodeKind, ...] = tuple(NodeKind)
NODE_INDEX = {n: i for i, n in enumerate(NODE_ORDER)}
SEMANTIC_NODES = NODE_ORDER[1:]


class RelationType(enum.Enum):
    HAS_RELATIONSHIP = "has_relationship"
    SHARES_THEME = "shares_theme"
    WITH_INTENTION = "with_intention"
    FACES_PROBLEM = "faces_problem"
    FINDS_SOLUTION = "finds_solution"
    REACHES_CONCLUSION = "reaches_conclusion"
    CONTEXT_LINK = "context_link"


RELATION_INDEX = {r: i for i, r in enumerate(RelationType)}

Edge = tuple[NodeKind, NodeKind, RelationType]

_S1, _S2 = NodeKind.SPEAKER1, NodeKind.SPEAKER2
_SHARED = {
    EntryKind.RELATIONSHIP: RelationType.HAS_RELATIONSHIP,
    EntryKind.PURPOSE_THEME: RelationType.SHARES_THEME,
    EntryKind.PROBLEM_DISAGREEMENT: RelationType.FACES_PROBLEM,
    EntryKind.SOLUTION: RelationType.FINDS_SOLUTION,
    EntryKind.CONCLUSION_AGREEMENT: RelationType.REACHES_CONCLUSION,
}


def _wiring() -> tuple[Edge, ...]:
    edges: list[Edge] = []
    for kind in ENTRY_KINDS:
        node = entry_node(kind)
        if kind is EntryKind.TASK_INTENTION_S1:
            edges.append((_S1, node, RelationType.WITH_INTENTION))
        elif kind is EntryKind.TASK_INTENTION_S2:
            edges.append((_S2, node, RelationType.WITH_INTENTION))
        else:
            rel = _SHARED[kind]
            edges += [(_S1, node, rel), (_S2, node, rel)]
    edges += [(NodeKind.CONTEXT, n, RelationType.CONTEXT_LINK) for n in SEMANTIC_NODES]
    return tuple(edges)


EDGES: tuple[Edge, ...] = _wiring()


@dataclass(frozen=True)
class DialogueSemanticGraph:
    nodes: Mapping[NodeKind, torch.Tensor]
    edges: tuple[Edge, ...] = EDGES

    @property
    def dim(self) -> int:
        return next(iter(self.nodes.values())).shape[-1]

    def degree(self, node: NodeKind) -> int:
        return sum((s is node) + (d is node) for s, d, _ in self.edges)

    def features(self) -> torch.Tensor:
        """Node features stacked in ``NODE_ORDER``: (..., 10, dim)."""
        return torch.stack([self.nodes[n] for n in NODE_ORDER], dim=-2)

    def relation_counts(self) -> Counter:
        return Counter(r for _, _, r in self.edges)


def speaker_embeddings(frozen: TextEncoder) -> tuple[torch.Tensor, torch.Tensor]:
    if frozen.mode is not EncoderMode.FROZEN:
        raise FrozenRequired("speaker embeddings come from the frozen encoder")
    cls = frozen.encode_cls([build_text_query(s) for s in SPEAKER_SENTENCES]).detach()
    return cls[0], cls[1]


def build_graph(
    v_context: torch.Tensor,
    v_s1: torch.Tensor,
    v_s2: torch.Tensor,
    embs: Mapping[EntryKind, torch.Tensor],
) -> DialogueSemanticGraph:
    nodes = {NodeKind.CONTEXT: v_context, _S1: v_s1, _S2: v_s2}
    for kind in ENTRY_KINDS:
        nodes[entry_node(kind)] = embs[kind]
    dims = {v.shape[-1] for v in nodes.values()}
    if len(dims) != 1:
        raise DimMismatch(f"node features disagree on dimension: {sorted(dims)}")
    return DialogueSemanticGraph(nodes, EDGES)


def edge_tensors(
    edges: tuple[Edge, ...] = EDGES, index: Mapping[NodeKind, int] = NODE_INDEX
) -> tuple[torch.Tensor, torch.Tensor, torch.Tensor]:
    """Directed message lists (src, dst, relation), each undirected edge both ways."""
    src, dst, rel = [], [], []
    for a, b, r in edges:
        for s, d in ((a, b), (b, a)):
            src.append(index[s])
            dst.append(index[d])
            rel.append(RELATION_INDEX[r])
    return torch.tensor(src), torch.tensor(dst), torch.tensor(rel)


def to_edge_list(graph: DialogueSemanticGraph | None = None) -> str:
    """Debug export, one ``src<TAB>relation<TAB>dst`` line per stored edge."""
    edges = EDGES if graph is None else graph.edges
    return "\n".join(f"{s.value}\t{r.value}\t{d.value}" for s, d, r in edges) + "\n"


def parse_edge_list(text: str) -> tuple[Edge, ...]:
    out = []
    for line in text.splitlines():
        if line.strip():
            s, r, d = line.split("\t")
            out.append((NodeKind(s), NodeKind(d), RelationType(r)))
    return tuple(out)
