import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from gainre.autodiff import make_rng
from gainre.docred import (
    NONE_ID,
    Document,
    Entity,
    Mention,
    all_pairs,
    build_vocab,
    document_to_record,
    encode_document,
    load_relation_map,
    parse_corpus,
    parse_document,
    sample_pairs,
    serialize_corpus,
)
from gainre.errors import ConfigError, ParseError, ValidationError
from gainre.synth import random_document

from oracles import encode, layout_doc


def record(**overrides):
    base = {
        "title": "Eldersburg",
        "sents": [["Eldersburg", "is", "in", "Maryland", "."]],
        "vertexSet": [
            [{"name": "Eldersburg", "sent_id": 0, "pos": [0, 1], "type": "LOC"}],
            [{"name": "Maryland", "sent_id": 0, "pos": [3, 4], "type": "LOC"}],
        ],
        "labels": [{"h": 0, "t": 1, "r": "P131", "evidence": [0]}],
    }
    base.update(overrides)
    return base


class TestParse:
    def test_minimal_document(self):
        doc = parse_document({"title": "x", "sents": [["a", "."]], "vertexSet": [[{"sent_id": 0, "pos": [0, 1], "type": "PER"}]]})
        assert doc.facts == [] and len(doc.entities) == 1
        assert doc.entities[0].mentions[0].name == "a"

    def test_head_equals_tail(self):
        with pytest.raises(ValidationError, match="Eldersburg.*labels\\[0\\]"):
            parse_document(record(labels=[{"h": 1, "t": 1, "r": "P131"}]))

    @pytest.mark.parametrize("pos, field", [([3, 9], "pos"), ([2, 2], "pos")])
    def test_span_out_of_range(self, pos, field):
        vs = [[{"name": "x", "sent_id": 0, "pos": pos, "type": "LOC"}]]
        with pytest.raises(ValidationError, match=field):
            parse_document(record(vertexSet=vs, labels=[]))

    def test_sentence_out_of_range(self):
        vs = [[{"name": "x", "sent_id": 4, "pos": [0, 1], "type": "LOC"}]]
        with pytest.raises(ValidationError, match="sent_id"):
            parse_document(record(vertexSet=vs, labels=[]))

    @pytest.mark.parametrize(
        "overrides, field",
        [
            ({"sents": "text"}, "sents"),
            ({"vertexSet": [[]]}, "vertexSet\\[0\\]"),
            ({"vertexSet": [[{"sent_id": 0, "pos": [0], "type": "LOC"}]]}, "pos"),
            ({"labels": [{"h": "0", "t": 1, "r": "P131"}]}, "labels\\[0\\]"),
            ({"labels": [{"h": 0, "t": 1, "r": 5}]}, "labels\\[0\\].r"),
        ],
    )
    def test_schema_errors_name_field(self, overrides, field):
        with pytest.raises(ParseError, match=field):
            parse_document(record(**overrides))

    def test_missing_title(self):
        with pytest.raises(ParseError, match="title"):
            parse_document({"sents": []}, index=3)

    def test_corpus_file(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text(json.dumps([record(), record(title="other")]))
        assert [d.title for d in parse_corpus(path)] == ["Eldersburg", "other"]

    def test_corpus_bad_json(self, tmp_path):
        path = tmp_path / "c.json"
        path.write_text("[{")
        with pytest.raises(ParseError, match="invalid JSON"):
            parse_corpus(path)

    def test_round_trip(self, tmp_path):
        rng = make_rng(1)
        docs = [random_document(rng, title=f"d{i}") for i in range(30)]
        serialize_corpus(docs, tmp_path / "c.json")
        assert parse_corpus(tmp_path / "c.json") == docs
        assert [parse_document(document_to_record(d)) for d in docs] == docs


class TestRelationMap:
    def test_text_with_na(self, tmp_path):
        (tmp_path / "r.txt").write_text("Na 0\nP17 1\nP131 2\n")
        assert load_relation_map(tmp_path / "r.txt") == {"P17": 0, "P131": 1}

    def test_json(self, tmp_path):
        (tmp_path / "r.json").write_text(json.dumps({"Na": 0, "P6": 2, "P17": 1}))
        assert load_relation_map(tmp_path / "r.json") == {"P17": 0, "P6": 1}

    def test_description_map(self, tmp_path):
        (tmp_path / "rel_info.json").write_text(json.dumps({"P6": "head of government", "P17": "country"}))
        assert load_relation_map(tmp_path / "rel_info.json") == {"P17": 0, "P6": 1}

    def test_bad_line(self, tmp_path):
        (tmp_path / "r.txt").write_text("P17\n")
        with pytest.raises(ParseError, match="r.txt:1"):
            load_relation_map(tmp_path / "r.txt")


class TestVocab:
    def test_min_count(self):
        doc = Document("t", [["a", "a", "b"]], [], [])
        vocab, _ = build_vocab([doc], min_count=2)
        assert vocab.word_id("b") == NONE_ID and vocab.word_id("a") != NONE_ID

    def test_random_rows_seeded(self):
        doc = Document("t", [["a", "b"]], [], [])
        _, t1 = build_vocab([doc], word_dim=5, rng=make_rng(3))
        _, t2 = build_vocab([doc], word_dim=5, rng=make_rng(3))
        assert np.array_equal(t1, t2) and np.all(np.abs(t1) <= 0.1)

    def test_pretrained_rows_copied(self, tmp_path):
        (tmp_path / "v.txt").write_text("a 0.5 -1.25 3\nzzz 1 1 1\n")
        doc = Document("t", [["A", "b"]], [], [])
        vocab, table = build_vocab([doc], word_dim=3, vectors_path=tmp_path / "v.txt")
        assert table[vocab.word_id("a")].tolist() == [0.5, -1.25, 3.0]

    def test_vector_dimension_mismatch(self, tmp_path):
        (tmp_path / "v.txt").write_text("a 0.5 -1.25\n")
        with pytest.raises(ConfigError):
            build_vocab([Document("t", [["a"]], [], [])], word_dim=3, vectors_path=tmp_path / "v.txt")

    def test_empty_corpus(self):
        with pytest.raises(ConfigError):
            build_vocab([])

    def test_reserved_ids(self):
        vocab, _ = build_vocab([layout_doc([[0]])])
        assert vocab.words["<unk>"] == 0 and vocab.types["<none>"] == 0
        assert sorted(vocab.words.values()) == list(range(len(vocab.words)))


class TestEncode:
    def test_hand_encoding(self):
        doc = parse_document(record())
        vocab, _ = build_vocab([doc])
        enc = encode_document(doc, vocab)
        assert enc.coref_ids.tolist() == [1, 0, 0, 2, 0]
        assert enc.type_ids.tolist() == [1, 0, 0, 1, 0]
        assert enc.pairs.tolist() == [[0, 1], [1, 0]]
        assert enc.targets.tolist() == [[1.0], [0.0]]

    def test_shared_coref_id(self):
        enc = encode(layout_doc([[0, 1]]))
        assert enc.coref_ids.tolist() == [1, 0, 1, 0]

    def test_overlapping_entities_rejected(self):
        doc = Document("t", [["a", "b", "."]], [Entity([Mention(0, 0, 2, "a b", "PER")]), Entity([Mention(0, 1, 2, "b", "PER")])], [])
        with pytest.raises(ValidationError, match="overlaps"):
            encode(doc)

    def test_none_ids_agree(self):
        rng = make_rng(4)
        for i in range(50):
            enc = encode(random_document(rng, title=f"d{i}"))
            assert np.array_equal(enc.coref_ids == 0, enc.type_ids == 0)

    def test_pair_index(self):
        enc = encode(layout_doc([[0], [0], [0], [0]]))
        for k, (h, t) in enumerate(enc.pairs):
            assert enc.pair_index(int(h), int(t)) == k


class TestSampling:
    def doc(self, n_entities, facts):
        return encode(layout_doc([[0]] * n_entities, facts=facts))

    def test_eval_keeps_all_pairs(self):
        enc = self.doc(3, [])
        assert len(sample_pairs(enc, 0.25, make_rng(0), training=False)) == 6

    @pytest.mark.parametrize("n_entities, expected_neg", [(6, 8), (3, 4)])
    def test_ratio_with_cap(self, n_entities, expected_neg):
        enc = self.doc(n_entities, [(0, 1, "r1"), (1, 2, "r2")])
        idx = sample_pairs(enc, 0.25, make_rng(0), training=True)
        mask = enc.positive_mask
        assert mask[idx].sum() == 2
        assert (~mask[idx]).sum() == min(expected_neg, (~mask).sum())

    def test_no_positives_fallback(self):
        idx = sample_pairs(self.doc(4, []), 0.25, make_rng(0), training=True)
        assert len(idx) == 1

    def test_deterministic(self):
        enc = self.doc(7, [(0, 1, "r1")])
        a = sample_pairs(enc, 0.25, make_rng(5), training=True)
        b = sample_pairs(enc, 0.25, make_rng(5), training=True)
        assert np.array_equal(a, b) and np.all(np.diff(a) > 0)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(1, 12))
    def test_all_pairs_count(self, p):
        pairs = all_pairs(p)
        assert len(pairs) == p * (p - 1) and len({tuple(x) for x in pairs}) == len(pairs)
