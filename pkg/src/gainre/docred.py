"""Reading, validating and encoding DocRED-style corpora.

A corpus file is a JSON array of documents::

    {"title": str,
     "sents": [[token, ...], ...],
     "vertexSet": [[{"name", "sent_id", "pos": [start, end], "type"}, ...], ...],
     "labels": [{"h", "t", "r", "evidence": [sent_id, ...]}, ...]}

``pos`` is a half-open token range inside sentence ``sent_id``. ``labels``
may be absent (unlabelled test files).
"""

from __future__ import annotations

import json
import logging
import math
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Iterable, Sequence

import numpy as np

from .errors import ConfigError, ParseError, ValidationError

log = logging.getLogger(__name__)

UNK_WORD = "<unk>"
NONE_TYPE = "<none>"
NONE_ID = 0


@dataclass(frozen=True)
class Mention:
    sent_id: int
    start: int
    end: int
    name: str
    type: str


@dataclass
class Entity:
    mentions: list[Mention]

    @property
    def names(self) -> frozenset[str]:
        return frozenset(m.name for m in self.mentions)

    @property
    def sentences(self) -> frozenset[int]:
        return frozenset(m.sent_id for m in self.mentions)


@dataclass(frozen=True)
class Fact:
    head: int
    tail: int
    relation: str
    evidence: tuple[int, ...] = ()


@dataclass
class Document:
    title: str
    sentences: list[list[str]]
    entities: list[Entity]
    facts: list[Fact] = field(default_factory=list)

    @property
    def n_tokens(self) -> int:
        return sum(len(s) for s in self.sentences)


# ---------------------------------------------------------------------------
# parsing
# ---------------------------------------------------------------------------


def _expect(cond: bool, msg: str, title, path: str, exc=ParseError) -> None:
    if not cond:
        raise exc(msg, title=title, field=path)


def _is_int(x: Any) -> bool:
    return isinstance(x, int) and not isinstance(x, bool)


def parse_document(record: Any, index: int = 0) -> Document:
    where = f"[{index}]"
    _expect(isinstance(record, dict), "document must be an object", None, where)
    title = record.get("title")
    _expect(isinstance(title, str), "missing or non-string title", None, f"{where}.title")

    sents = record.get("sents")
    _expect(isinstance(sents, list), "sents must be an array", title, "sents")
    for i, sent in enumerate(sents):
        _expect(
            isinstance(sent, list) and all(isinstance(tok, str) for tok in sent),
            "sentence must be an array of strings",
            title,
            f"sents[{i}]",
        )

    vertex_set = record.get("vertexSet")
    _expect(isinstance(vertex_set, list), "vertexSet must be an array", title, "vertexSet")
    entities = []
    for e, mentions in enumerate(vertex_set):
        path = f"vertexSet[{e}]"
        _expect(isinstance(mentions, list) and mentions, "entity needs at least one mention", title, path)
        parsed = []
        for j, m in enumerate(mentions):
            mpath = f"{path}[{j}]"
            _expect(isinstance(m, dict), "mention must be an object", title, mpath)
            sent_id, pos = m.get("sent_id"), m.get("pos")
            _expect(_is_int(sent_id), "sent_id must be an integer", title, f"{mpath}.sent_id")
            _expect(
                isinstance(pos, list) and len(pos) == 2 and all(_is_int(p) for p in pos),
                "pos must be [start, end]",
                title,
                f"{mpath}.pos",
            )
            _expect(isinstance(m.get("name", ""), str), "name must be a string", title, f"{mpath}.name")
            _expect(isinstance(m.get("type", ""), str), "type must be a string", title, f"{mpath}.type")
            start, end = pos
            _expect(0 <= sent_id < len(sents), f"sent_id {sent_id} out of range", title, f"{mpath}.sent_id", ValidationError)
            _expect(
                0 <= start < end <= len(sents[sent_id]),
                f"span [{start}, {end}) outside sentence of length {len(sents[sent_id])}",
                title,
                f"{mpath}.pos",
                ValidationError,
            )
            name = m.get("name") or " ".join(sents[sent_id][start:end])
            parsed.append(Mention(sent_id, start, end, name, m.get("type", "")))
        entities.append(Entity(parsed))

    labels = record.get("labels", [])
    _expect(isinstance(labels, list), "labels must be an array", title, "labels")
    facts = []
    for k, lab in enumerate(labels):
        lpath = f"labels[{k}]"
        _expect(isinstance(lab, dict), "label must be an object", title, lpath)
        h, t, r = lab.get("h"), lab.get("t"), lab.get("r")
        _expect(_is_int(h) and _is_int(t), "h and t must be integers", title, lpath)
        _expect(isinstance(r, str), "r must be a string", title, f"{lpath}.r")
        _expect(0 <= h < len(entities), f"head {h} out of range", title, f"{lpath}.h", ValidationError)
        _expect(0 <= t < len(entities), f"tail {t} out of range", title, f"{lpath}.t", ValidationError)
        _expect(h != t, "head and tail must differ", title, lpath, ValidationError)
        evidence = lab.get("evidence", [])
        _expect(
            isinstance(evidence, list) and all(_is_int(x) for x in evidence),
            "evidence must be an array of sentence ids",
            title,
            f"{lpath}.evidence",
        )
        facts.append(Fact(h, t, r, tuple(evidence)))
    return Document(title, [list(s) for s in sents], entities, facts)


def parse_corpus(path: str | Path) -> list[Document]:
    try:
        with open(path, encoding="utf-8") as fh:
            records = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ParseError(f"{path}: invalid JSON ({exc})") from exc
    if not isinstance(records, list):
        raise ParseError(f"{path}: top level must be an array of documents")
    return [parse_document(rec, i) for i, rec in enumerate(records)]


def document_to_record(doc: Document) -> dict:
    return {
        "title": doc.title,
        "sents": doc.sentences,
        "vertexSet": [
            [{"name": m.name, "sent_id": m.sent_id, "pos": [m.start, m.end], "type": m.type} for m in ent.mentions]
            for ent in doc.entities
        ],
        "labels": [{"h": f.head, "t": f.tail, "r": f.relation, "evidence": list(f.evidence)} for f in doc.facts],
    }


def serialize_corpus(docs: Iterable[Document], path: str | Path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump([document_to_record(d) for d in docs], fh, ensure_ascii=False)


def load_relation_map(path: str | Path) -> dict[str, int]:
    """Read ``name id`` lines or a JSON object into a dense relation map.

    A JSON object maps names to ids, or ids to descriptions, in which case
    the sorted keys are numbered.

    A ``Na``/``NA`` entry with id 0, as shipped with DocRED, marks the
    no-relation class and is dropped; the remaining ids are re-based so
    that the map stays dense.
    """
    text = Path(path).read_text(encoding="utf-8")
    if text.lstrip().startswith("{"):
        obj = json.loads(text)
        if all(isinstance(v, int) for v in obj.values()):
            raw = {str(k): v for k, v in obj.items()}
        else:
            # id -> description map (DocRED's rel_info.json): ids in sorted order
            raw = {str(k): i for i, k in enumerate(sorted(obj))}
    else:
        raw = {}
        for lineno, line in enumerate(text.splitlines(), 1):
            if not line.strip():
                continue
            parts = line.split()
            if len(parts) != 2:
                raise ParseError(f"{path}:{lineno}: expected 'name id'")
            raw[parts[0]] = int(parts[1])
    raw = {k: v for k, v in raw.items() if k.lower() != "na"}
    return {name: i for i, name in enumerate(sorted(raw, key=raw.get))}


# ---------------------------------------------------------------------------
# vocabulary
# ---------------------------------------------------------------------------


@dataclass
class Vocab:
    words: dict[str, int]
    types: dict[str, int]
    relations: dict[str, int]
    max_entities: int
    lowercase: bool = True

    @property
    def n_corefs(self) -> int:
        return self.max_entities + 1

    def word_id(self, token: str) -> int:
        return self.words.get(token.lower() if self.lowercase else token, NONE_ID)

    def relation_names(self) -> list[str]:
        return sorted(self.relations, key=self.relations.get)

    def to_dict(self) -> dict:
        return {
            "words": self.words,
            "types": self.types,
            "relations": self.relations,
            "max_entities": self.max_entities,
            "lowercase": self.lowercase,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Vocab":
        return cls(dict(d["words"]), dict(d["types"]), dict(d["relations"]), int(d["max_entities"]), bool(d["lowercase"]))


def read_vectors(path: str | Path, dim: int) -> dict[str, np.ndarray]:
    vectors = {}
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip().split(" ")
            if len(parts) < 2:
                continue
            if len(parts) - 1 != dim:
                raise ConfigError(f"{path}:{lineno}: vector has {len(parts) - 1} dims, config expects {dim}")
            vectors[parts[0]] = np.asarray(parts[1:], dtype=np.float64)
    return vectors


def build_vocab(
    docs: Sequence[Document],
    min_count: int = 1,
    relations: dict[str, int] | None = None,
    vectors_path: str | Path | None = None,
    word_dim: int = 100,
    rng: np.random.Generator | None = None,
    max_entities: int = 64,
    lowercase: bool = True,
) -> tuple[Vocab, np.ndarray]:
    """Build the vocabulary and an initial word-embedding table.

    Rows without a pretrained vector are drawn uniformly from [-0.1, 0.1].
    """
    if not docs:
        raise ConfigError("cannot build a vocabulary from an empty corpus")
    counts = Counter(
        tok.lower() if lowercase else tok for d in docs for sent in d.sentences for tok in sent
    )
    words = {UNK_WORD: NONE_ID}
    for tok in sorted(counts):
        if counts[tok] >= min_count:
            words[tok] = len(words)

    types = {NONE_TYPE: NONE_ID}
    for t in sorted({m.type for d in docs for e in d.entities for m in e.mentions}):
        types[t] = len(types)

    if relations is None:
        relations = {r: i for i, r in enumerate(sorted({f.relation for d in docs for f in d.facts}))}
    max_entities = max(max_entities, max(len(d.entities) for d in docs))

    rng = rng if rng is not None else np.random.default_rng(0)
    table = rng.uniform(-0.1, 0.1, size=(len(words), word_dim))
    if vectors_path is not None:
        vectors = read_vectors(vectors_path, word_dim)
        hits = 0
        for tok, idx in words.items():
            if tok in vectors:
                table[idx] = vectors[tok]
                hits += 1
        log.info("pretrained vectors cover %d of %d words", hits, len(words))
    return Vocab(words, types, dict(relations), max_entities, lowercase), table


# ---------------------------------------------------------------------------
# encoding
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class MentionSpan:
    """A mention with document-level token offsets (``end`` exclusive)."""

    entity: int
    sent_id: int
    start: int
    end: int


@dataclass
class EncodedDoc:
    title: str
    word_ids: np.ndarray
    type_ids: np.ndarray
    coref_ids: np.ndarray
    sent_offsets: list[int]
    mentions: list[MentionSpan]
    n_entities: int
    pairs: np.ndarray
    targets: np.ndarray
    entity_sentences: list[frozenset[int]]

    @property
    def n_tokens(self) -> int:
        return int(self.word_ids.shape[0])

    def pair_index(self, head: int, tail: int) -> int:
        P = self.n_entities
        return head * (P - 1) + (tail if tail < head else tail - 1)

    @property
    def positive_mask(self) -> np.ndarray:
        return self.targets.any(axis=1) if self.targets.size else np.zeros(len(self.pairs), dtype=bool)


def all_pairs(n_entities: int) -> np.ndarray:
    pairs = [(h, t) for h in range(n_entities) for t in range(n_entities) if h != t]
    return np.asarray(pairs, dtype=np.int64).reshape(-1, 2)


def encode_document(doc: Document, vocab: Vocab) -> EncodedDoc:
    if doc.n_tokens == 0:
        raise ValidationError("document has no tokens", title=doc.title)
    if len(doc.entities) > vocab.max_entities:
        raise ValidationError(
            f"{len(doc.entities)} entities exceed the coreference table size {vocab.max_entities}",
            title=doc.title,
        )
    offsets = [0]
    for sent in doc.sentences:
        offsets.append(offsets[-1] + len(sent))
    word_ids = np.asarray([vocab.word_id(tok) for sent in doc.sentences for tok in sent], dtype=np.int64)
    type_ids = np.zeros_like(word_ids)
    coref_ids = np.zeros_like(word_ids)

    spans = []
    for e, ent in enumerate(doc.entities):
        for j, m in enumerate(ent.mentions):
            if m.type not in vocab.types:
                raise ValidationError(f"unknown entity type {m.type!r}", title=doc.title, field=f"vertexSet[{e}][{j}].type")
            start, end = offsets[m.sent_id] + m.start, offsets[m.sent_id] + m.end
            clash = coref_ids[start:end]
            if np.any((clash != NONE_ID) & (clash != e + 1)):
                other = int(clash[(clash != NONE_ID) & (clash != e + 1)][0]) - 1
                raise ValidationError(
                    f"mention overlaps a mention of entity {other}", title=doc.title, field=f"vertexSet[{e}][{j}].pos"
                )
            coref_ids[start:end] = e + 1
            type_ids[start:end] = vocab.types[m.type]
            spans.append(MentionSpan(e, m.sent_id, start, end))
    spans = sorted(set(spans), key=lambda s: (s.entity, s.sent_id, s.start, s.end))

    P = len(doc.entities)
    pairs = all_pairs(P)
    targets = np.zeros((len(pairs), len(vocab.relations)), dtype=np.float64)
    for f in doc.facts:
        if f.relation not in vocab.relations:
            raise ValidationError(f"unknown relation {f.relation!r}", title=doc.title, field="labels")
        idx = f.head * (P - 1) + (f.tail if f.tail < f.head else f.tail - 1)
        targets[idx, vocab.relations[f.relation]] = 1.0
    return EncodedDoc(
        title=doc.title,
        word_ids=word_ids,
        type_ids=type_ids,
        coref_ids=coref_ids,
        sent_offsets=offsets[:-1],
        mentions=spans,
        n_entities=P,
        pairs=pairs,
        targets=targets,
        entity_sentences=[ent.sentences for ent in doc.entities],
    )


def sample_pairs(encoded: EncodedDoc, ratio: float, rng: np.random.Generator, training: bool) -> np.ndarray:
    """Indices into ``encoded.pairs`` used for one forward pass.

    Evaluation keeps every ordered pair. Training keeps all positive pairs
    and ``round(#pos / ratio)`` negatives, capped at what the document has;
    a document without positives still contributes one negative.
    """
    n = len(encoded.pairs)
    if not training:
        return np.arange(n)
    positive = encoded.positive_mask
    pos_idx = np.flatnonzero(positive)
    neg_idx = np.flatnonzero(~positive)
    want = int(math.floor(len(pos_idx) / ratio + 0.5))
    if len(pos_idx) == 0:
        want = max(1, want)
    want = min(want, len(neg_idx))
    chosen = rng.choice(neg_idx, size=want, replace=False) if want else np.empty(0, dtype=np.int64)
    return np.sort(np.concatenate([pos_idx, chosen]).astype(np.int64))
