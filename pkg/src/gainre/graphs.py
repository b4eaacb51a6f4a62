"""Mention-level and entity-level document graphs.

The mention graph has one node per mention plus, unless ablated, a single
document node numbered last. Its three edge sets are stored undirected as
sorted ``(u, v)`` pairs with ``u < v``:

* ``intra``: every pair of mentions of the same entity;
* ``inter``: mentions of different entities that share a sentence;
* ``document``: each mention to the document node.

The entity graph merges mentions into entities and keeps an undirected edge
wherever some inter-entity mention edge linked the two.
"""

from __future__ import annotations

from collections import defaultdict
from dataclasses import dataclass, field
from itertools import combinations

import numpy as np

from .docred import EncodedDoc, MentionSpan
from .errors import UnsupportedConfigError

EDGE_TYPES = ("intra", "inter", "document")


@dataclass
class MentionGraph:
    mention_nodes: list[MentionSpan]
    has_document_node: bool
    edges: dict[str, list[tuple[int, int]]]
    n_entities: int

    @property
    def n_mentions(self) -> int:
        return len(self.mention_nodes)

    @property
    def n_nodes(self) -> int:
        return self.n_mentions + int(self.has_document_node)

    @property
    def document_node(self) -> int | None:
        return self.n_mentions if self.has_document_node else None

    def adjacency(self, kind: str) -> np.ndarray:
        """Symmetric 0/1 matrix over all nodes for one edge type."""
        A = np.zeros((self.n_nodes, self.n_nodes))
        for u, v in self.edges.get(kind, ()):
            A[u, v] = A[v, u] = 1.0
        return A

    def entity_mentions(self) -> list[list[int]]:
        groups: list[list[int]] = [[] for _ in range(self.n_entities)]
        for i, m in enumerate(self.mention_nodes):
            groups[m.entity].append(i)
        return groups


@dataclass
class EntityGraph:
    n_entities: int
    edges: list[tuple[int, int]]
    _adj: set[tuple[int, int]] = field(default_factory=set, repr=False)

    def __post_init__(self) -> None:
        self._adj = {(i, j) for i, j in self.edges} | {(j, i) for i, j in self.edges}

    def adjacent(self, i: int, j: int) -> bool:
        return (i, j) in self._adj

    def neighbours(self, i: int) -> list[int]:
        return sorted(j for (a, j) in self._adj if a == i)

    def adjacency(self) -> np.ndarray:
        A = np.zeros((self.n_entities, self.n_entities))
        for i, j in self.edges:
            A[i, j] = A[j, i] = 1.0
        return A


PathSet = dict[tuple[int, int], list[int]]


def build_hmg(encoded: EncodedDoc, ablate_document_node: bool = False) -> MentionGraph:
    nodes = sorted(encoded.mentions, key=lambda m: (m.entity, m.sent_id, m.start, m.end))
    by_entity: dict[int, list[int]] = defaultdict(list)
    by_sentence: dict[int, list[int]] = defaultdict(list)
    for i, m in enumerate(nodes):
        by_entity[m.entity].append(i)
        by_sentence[m.sent_id].append(i)

    intra = {pair for group in by_entity.values() for pair in combinations(group, 2)}
    inter = {
        (u, v)
        for group in by_sentence.values()
        for u, v in combinations(sorted(group), 2)
        if nodes[u].entity != nodes[v].entity
    }
    edges = {"intra": sorted(intra), "inter": sorted(inter), "document": []}
    if not ablate_document_node:
        doc = len(nodes)
        edges["document"] = [(i, doc) for i in range(len(nodes))]
    return MentionGraph(nodes, not ablate_document_node, edges, encoded.n_entities)


def build_eg(hmg: MentionGraph) -> EntityGraph:
    nodes = hmg.mention_nodes
    merged = set()
    for u, v in hmg.edges["inter"]:
        a, b = nodes[u].entity, nodes[v].entity
        merged.add((min(a, b), max(a, b)))
    return EntityGraph(hmg.n_entities, sorted(merged))


def enumerate_paths(eg: EntityGraph, max_hops: int = 2) -> PathSet:
    """Two-hop bridges ``o`` for every ordered pair ``(h, t)``, ascending."""
    if max_hops != 2:
        raise UnsupportedConfigError(f"only two-hop paths are supported, got max_hops={max_hops}")
    P = eg.n_entities
    nbrs = [set(eg.neighbours(i)) for i in range(P)]
    paths: PathSet = {}
    for h in range(P):
        for t in range(P):
            if h != t:
                paths[(h, t)] = sorted((nbrs[h] & nbrs[t]) - {h, t})
    return paths


def graph_dump(title: str, hmg: MentionGraph, eg: EntityGraph, paths: PathSet) -> dict:
    """JSON-ready snapshot of both graphs, used by the CLI and golden tests."""
    return {
        "title": title,
        "nodes": [
            {"id": i, "kind": "mention", "entity": m.entity, "sent_id": m.sent_id, "span": [m.start, m.end]}
            for i, m in enumerate(hmg.mention_nodes)
        ]
        + ([{"id": hmg.document_node, "kind": "document"}] if hmg.has_document_node else []),
        "edges": {k: [list(e) for e in hmg.edges[k]] for k in EDGE_TYPES},
        "entity_edges": [list(e) for e in eg.edges],
        "paths": [{"head": h, "tail": t, "via": via} for (h, t), via in sorted(paths.items()) if via],
    }
