import json
from math import comb

import numpy as np
import pytest

from gainre.autodiff import make_rng
from gainre.docred import Document, Entity
from gainre.errors import UnsupportedConfigError
from gainre.graphs import EntityGraph, build_eg, build_hmg, enumerate_paths, graph_dump
from gainre.synth import random_document

from oracles import encode, graph_nodes, layout_doc, reference_eg, reference_hmg, reference_nodes, reference_paths

A, B, C = 0, 1, 2


@pytest.fixture
def toy():
    # A={m1@s1, m2@s2}, B={m3@s1}, C={m4@s2}; sentence 0 is filler
    return build_hmg(encode(layout_doc([[1, 2], [1], [2]], n_sentences=3)))


def edge_sets(hmg):
    return {k: set(v) for k, v in hmg.edges.items()}


class TestMentionGraph:
    def test_toy_edges(self, toy):
        # nodes: m1=0, m2=1, m3=2, m4=3, document=4
        assert toy.edges["intra"] == [(0, 1)]
        assert toy.edges["inter"] == [(0, 2), (1, 3)]
        assert toy.edges["document"] == [(i, 4) for i in range(4)]
        assert toy.document_node == 4

    def test_single_mention(self):
        hmg = build_hmg(encode(layout_doc([[0]])))
        assert hmg.edges["intra"] == [] and hmg.edges["inter"] == []
        assert len(hmg.edges["document"]) == 1

    @pytest.mark.parametrize("k", [1, 2, 3, 5])
    def test_complete_intra_graph(self, k):
        hmg = build_hmg(encode(layout_doc([list(range(k))])))
        assert len(hmg.edges["intra"]) == k * (k - 1) // 2

    def test_same_entity_same_sentence_is_intra_only(self):
        hmg = build_hmg(encode(layout_doc([[0, 0]])))
        assert hmg.edges["intra"] == [(0, 1)]
        assert hmg.edges["inter"] == []

    def test_ablated_document_node(self, toy):
        hmg = build_hmg(encode(layout_doc([[1, 2], [1], [2]], n_sentences=3)), ablate_document_node=True)
        assert hmg.edges["document"] == [] and hmg.document_node is None
        assert hmg.n_nodes == hmg.n_mentions == 4
        assert hmg.edges["intra"] == toy.edges["intra"] and hmg.edges["inter"] == toy.edges["inter"]

    def test_no_mentions_leaves_document_node(self):
        doc = Document("empty", [["x", "."]], [Entity([])], [])
        hmg = build_hmg(encode(doc))
        assert hmg.n_nodes == 1 and all(not v for v in hmg.edges.values())

    def test_adjacency_symmetric(self, toy):
        A_ = toy.adjacency("inter")
        assert np.array_equal(A_, A_.T) and A_[0, 2] == 1 and A_.sum() == 4


class TestEntityGraph:
    def test_toy_projection(self, toy):
        assert build_eg(toy).edges == [(A, B), (A, C)]

    def test_no_inter_edges(self):
        eg = build_eg(build_hmg(encode(layout_doc([[0], [1], [2]]))))
        assert eg.edges == []

    def test_deduplicates_shared_sentences(self):
        eg = build_eg(build_hmg(encode(layout_doc([[0, 1], [0, 1]]))))
        assert eg.edges == [(0, 1)]

    def test_document_node_not_in_eg(self, toy):
        assert build_eg(toy).n_entities == 3


class TestPaths:
    def test_toy_paths(self):
        paths = enumerate_paths(EntityGraph(3, [(A, B), (A, C)]))
        assert paths[(B, C)] == [A] and paths[(C, B)] == [A]
        assert paths[(A, B)] == []

    def test_triangle(self):
        assert enumerate_paths(EntityGraph(3, [(A, B), (B, C), (A, C)]))[(A, C)] == [B]

    def test_edgeless(self):
        paths = enumerate_paths(EntityGraph(4, []))
        assert len(paths) == 12 and all(v == [] for v in paths.values())

    @pytest.mark.parametrize("hops", [1, 3])
    def test_other_hop_counts_unsupported(self, hops):
        with pytest.raises(UnsupportedConfigError):
            enumerate_paths(EntityGraph(3, []), max_hops=hops)

    def test_matches_triple_loop_up_to_12_entities(self):
        rng = np.random.default_rng(0)
        for _ in range(100):
            n = int(rng.integers(1, 13))
            edges = {(a, b) for a in range(n) for b in range(a + 1, n) if rng.random() < 0.3}
            assert enumerate_paths(EntityGraph(n, sorted(edges))) == reference_paths(n, edges)


@pytest.fixture(scope="module")
def docs():
    rng = make_rng(2024)
    return [random_document(rng, n_sentences=(1, 5), n_entities=(1, 8), title=f"d{i}") for i in range(150)]


class TestAgainstBruteForce:
    def test_edges_and_projection(self, docs):
        for doc in docs:
            hmg = build_hmg(encode(doc))
            assert graph_nodes(doc, hmg) == reference_nodes(doc)
            assert edge_sets(hmg) == reference_hmg(doc)
            eg = build_eg(hmg)
            assert set(eg.edges) == reference_eg(doc)
            assert enumerate_paths(eg) == reference_paths(len(doc.entities), set(eg.edges))

    def test_edge_count_formula(self, docs):
        for doc in docs:
            hmg = build_hmg(encode(doc))
            nodes = reference_nodes(doc)
            per_entity = [sum(1 for n in nodes if n[0] == e) for e in range(len(doc.entities))]
            assert len(hmg.edges["document"]) == len(nodes)
            assert len(hmg.edges["intra"]) == sum(comb(k, 2) for k in per_entity)

    def test_invariant_to_mention_order(self, docs):
        rng = np.random.default_rng(5)
        for doc in docs[:50]:
            shuffled = Document(
                doc.title,
                doc.sentences,
                [Entity([e.mentions[i] for i in rng.permutation(len(e.mentions))]) for e in doc.entities],
                doc.facts,
            )
            a, b = build_hmg(encode(doc)), build_hmg(encode(shuffled))
            assert a.edges == b.edges and a.mention_nodes == b.mention_nodes

    def test_no_self_loops_or_duplicates(self, docs):
        for doc in docs:
            hmg = build_hmg(encode(doc))
            for edges in hmg.edges.values():
                assert len(edges) == len(set(edges))
                assert all(u < v for u, v in edges)


def test_graph_dump_is_json(toy):
    eg = build_eg(toy)
    dump = graph_dump("toy", toy, eg, enumerate_paths(eg))
    back = json.loads(json.dumps(dump))
    assert back["paths"] == [{"head": 1, "tail": 2, "via": [0]}, {"head": 2, "tail": 1, "via": [0]}]
    assert back["nodes"][-1] == {"id": 4, "kind": "document"}
