"""Typed dialogue graph construction.

Node blocks are laid out as [utterances, faces, audios, emotions,
speakers] so the feature matrix fed to the graph convolution can be
assembled by stacking the per-type blocks in the same order. Emotion
nodes are instanced per utterance; speaker nodes once per distinct
speaker, in order of first appearance.
"""
from __future__ import annotations

from dataclasses import dataclass
from enum import Enum

import numpy as np

from .corpus import DialogueRecord, distinct_speakers


class NodeType(Enum):
    UTTERANCE = "u"
    FACE = "f"
    AUDIO = "a"
    EMOTION = "e"
    SPEAKER = "s"


NODE_TYPES = tuple(NodeType)
ABLATABLE = {"face": NodeType.FACE, "audio": NodeType.AUDIO,
             "emotion": NodeType.EMOTION, "speaker": NodeType.SPEAKER}


@dataclass(frozen=True)
class Node:
    idx: int
    kind: NodeType
    source: int  # utterance index, or position in speaker_ids for speakers


@dataclass
class HeteroGraph:
    nodes: list[Node]
    adjacency: np.ndarray                      # |V| x |V|, entries 0/1
    type_adjacency: dict[NodeType, np.ndarray]
    edge_rules: dict[tuple[int, int], list[int]]  # (i<j) -> firing rule numbers
    n_utterances: int
    speaker_ids: list[str]
    mask_orientation: str

    @property
    def n_nodes(self) -> int:
        return len(self.nodes)

    def nodes_of(self, kind: NodeType) -> list[Node]:
        return [n for n in self.nodes if n.kind == kind]

    def edges(self) -> list[tuple[int, int]]:
        return sorted(self.edge_rules)


def _resolve_ablations(ablate) -> set[NodeType]:
    dropped = set()
    for name in ablate or ():
        kind = ABLATABLE.get(name)
        if kind is None:
            raise ValueError(f"unknown ablation {name!r}; choose from {sorted(ABLATABLE)}")
        dropped.add(kind)
    return dropped


def build_hetero_graph(record: DialogueRecord, self_loops: bool = True,
                       mask_orientation: str = "sender",
                       ablate: tuple[str, ...] = ()) -> HeteroGraph:
    """Build the typed graph for one dialogue.

    An edge exists iff at least one of the eleven pairing rules holds;
    rules touching absent node types (missing modalities or ablated
    types) are skipped along with the nodes themselves.
    """
    if mask_orientation not in ("sender", "receiver"):
        raise ValueError(f"mask_orientation must be sender or receiver, got {mask_orientation!r}")
    n = record.n_turns
    dropped = _resolve_ablations(ablate)
    has_face = record.faces is not None and NodeType.FACE not in dropped
    has_audio = record.audios is not None and NodeType.AUDIO not in dropped
    has_emotion = NodeType.EMOTION not in dropped
    has_speaker = NodeType.SPEAKER not in dropped

    speaker_ids = distinct_speakers(record)

    nodes: list[Node] = []
    utt = [None] * n
    face = [None] * n
    audio = [None] * n
    emo = [None] * n
    spk: dict[int, int] = {}

    def add(kind: NodeType, source: int) -> int:
        nodes.append(Node(len(nodes), kind, source))
        return nodes[-1].idx

    for i in range(n):
        utt[i] = add(NodeType.UTTERANCE, i)
    if has_face:
        for i in range(n):
            face[i] = add(NodeType.FACE, i)
    if has_audio:
        for i in range(n):
            audio[i] = add(NodeType.AUDIO, i)
    if has_emotion:
        for i in range(n):
            emo[i] = add(NodeType.EMOTION, i)
    if has_speaker:
        for k in range(len(speaker_ids)):
            spk[k] = add(NodeType.SPEAKER, k)

    size = len(nodes)
    adjacency = np.zeros((size, size), dtype=np.int64)
    edge_rules: dict[tuple[int, int], list[int]] = {}

    def connect(a: int | None, b: int | None, rule: int) -> None:
        if a is None or b is None or a == b:
            return
        adjacency[a, b] = adjacency[b, a] = 1
        key = (a, b) if a < b else (b, a)
        rules = edge_rules.setdefault(key, [])
        if rule not in rules:
            rules.append(rule)

    spk_of = [speaker_ids.index(s) for s in record.speakers]
    for i in range(n):
        for j in range(i + 1, n):
            linked = (j == i + 1) or (spk_of[i] == spk_of[j])
            if linked:
                connect(utt[i], utt[j], 1)    # adjacent or same-speaker utterances
                connect(face[i], face[j], 6)
                connect(audio[i], audio[j], 7)
        connect(utt[i], face[i], 2)
        connect(utt[i], audio[i], 3)
        connect(utt[i], emo[i], 4)
        spk_node = spk.get(spk_of[i])
        connect(utt[i], spk_node, 5)
        connect(face[i], spk_node, 8)
        connect(audio[i], spk_node, 9)
        connect(face[i], emo[i], 10)
        connect(audio[i], emo[i], 11)

    if self_loops:
        np.fill_diagonal(adjacency, 1)

    kinds = np.array([node.kind.value for node in nodes])
    type_adj = {}
    for kind in NODE_TYPES:
        mask = kinds == kind.value
        if mask_orientation == "sender":
            type_adj[kind] = adjacency * mask[np.newaxis, :]
        else:
            type_adj[kind] = adjacency * mask[:, np.newaxis]

    return HeteroGraph(nodes, adjacency, type_adj, edge_rules, n,
                       speaker_ids, mask_orientation)


def type_adjacency(graph: HeteroGraph, kind: NodeType) -> np.ndarray:
    return graph.type_adjacency[kind]


def format_graph(graph: HeteroGraph) -> str:
    """Human-readable dump: nodes, edges with rule numbers, 0/1 grids."""
    lines = [f"nodes: {graph.n_nodes}"]
    for node in graph.nodes:
        lines.append(f"  [{node.idx:3d}] {node.kind.name.lower():9s} source={node.source}")
    lines.append(f"edges: {len(graph.edge_rules)}")
    for (a, b), rules in sorted(graph.edge_rules.items()):
        tag = ",".join(str(r) for r in sorted(rules))
        lines.append(f"  ({a},{b}) rules {tag}")
    lines.append("adjacency:")
    lines.extend("  " + " ".join(str(v) for v in row) for row in graph.adjacency)
    for kind in NODE_TYPES:
        lines.append(f"adjacency[{kind.name.lower()}]:")
        lines.extend("  " + " ".join(str(v) for v in row)
                     for row in graph.type_adjacency[kind])
    return "\n".join(lines)
