"""Synthetic two-hop reasoning corpora.

Each document states a few binary relations, one per sentence, as
``<head> <trigger> <tail> .``. Relation ``r3(h, t)`` holds exactly when
``r1(h, o)`` and ``r2(o, t)`` are both stated for some bridge ``o``; it is
never stated directly, and ``h`` and ``t`` never share a sentence.

Half of the documents (on average) plant one such chain. The rest plant a
broken one (``r1(a, b)``, ``r2(c, d)`` with ``b != c``). Leftover entities
become decoy ``r1``/``r2`` statements between fresh entities, so the local
role of an entity (``r1`` head, ``r2`` tail) does not reveal whether a
chain connects it to anything.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .autodiff import make_rng
from .docred import Document, Entity, Fact, Mention, serialize_corpus

RELATIONS = ("r1", "r2", "r3", "r4")
TRIGGERS = {"r1": ("founded", "created"), "r2": ("joined", "entered"), "r4": ("met", "saw")}
FILLERS = ("the", "a", "then", "later", "also", "and")
TYPES = ("PER", "ORG", "LOC")
NAME_POOL = 200


def _chains(statements: list[tuple[int, str, int]]) -> set[tuple[int, int]]:
    r1 = [(h, o) for h, r, o in statements if r == "r1"]
    r2 = [(o, t) for o, r, t in statements if r == "r2"]
    return {(h, t) for h, o in r1 for o2, t in r2 if o == o2 and h != t}


def make_document(
    rng: np.random.Generator,
    n_entities: int,
    title: str,
    positive_rate: float = 0.5,
    noise_edges: int = 1,
) -> Document:
    if n_entities < 3:
        raise ValueError("two-hop documents need at least three entities")
    ents = [int(e) for e in rng.permutation(n_entities)]
    statements: list[tuple[int, str, int]] = []
    if rng.random() < positive_rate:
        h, o, t = ents[:3]
        statements += [(h, "r1", o), (o, "r2", t)]
        rest = ents[3:]
    elif n_entities >= 4:
        a, b, c, d = ents[:4]
        statements += [(a, "r1", b), (c, "r2", d)]
        rest = ents[4:]
    else:
        a, b, c = ents
        statements += [(a, "r1", b), (c, "r2", a)]
        rest = []
    while len(rest) >= 2:
        x, y = rest.pop(), rest.pop()
        statements.append((x, str(rng.choice(["r1", "r2"])), y))

    chains = _chains(statements)
    linked = {frozenset((x, y)) for x, _, y in statements}
    for _ in range(noise_edges):
        options = [
            (x, y)
            for x in range(n_entities)
            for y in range(n_entities)
            if x != y and frozenset((x, y)) not in linked and (x, y) not in chains and (y, x) not in chains
        ]
        if not options:
            break
        x, y = options[int(rng.integers(len(options)))]
        statements.append((x, "r4", y))
        linked.add(frozenset((x, y)))

    # one sentence per statement, plus one for each entity never mentioned
    mentioned = {x for s in statements for x in (s[0], s[2])}
    sentences_spec: list[tuple] = [("rel", s) for s in statements]
    sentences_spec += [("lone", e) for e in range(n_entities) if e not in mentioned]
    order = rng.permutation(len(sentences_spec))

    names = rng.choice(NAME_POOL, size=n_entities, replace=False)
    types = [str(rng.choice(TYPES)) for _ in range(n_entities)]
    mentions: list[list[Mention]] = [[] for _ in range(n_entities)]
    sentences: list[list[str]] = []
    evidence: dict[tuple[int, str, int], int] = {}
    for sid, k in enumerate(order):
        kind, payload = sentences_spec[k]
        tokens = [str(rng.choice(FILLERS))] if rng.random() < 0.5 else []
        if kind == "rel":
            x, rel, y = payload
            spots = [(x, len(tokens))]
            tokens.append(f"ent{names[x]}")
            tokens.append(str(rng.choice(TRIGGERS[rel])))
            spots.append((y, len(tokens)))
            tokens.append(f"ent{names[y]}")
            evidence[payload] = sid
        else:
            spots = [(payload, len(tokens))]
            tokens.append(f"ent{names[payload]}")
            tokens.append(str(rng.choice(FILLERS)))
        tokens.append(".")
        for e, pos in spots:
            mentions[e].append(Mention(sid, pos, pos + 1, tokens[pos], types[e]))
        sentences.append(tokens)

    facts = [Fact(x, y, rel, (evidence[(x, rel, y)],)) for x, rel, y in statements]
    by_r1 = {(h, o): evidence[(h, "r1", o)] for h, r, o in statements if r == "r1"}
    by_r2 = {(o, t): evidence[(o, "r2", t)] for o, r, t in statements if r == "r2"}
    for h, t in sorted(chains):
        bridges = sorted(o for (hh, o) in by_r1 if hh == h and (o, t) in by_r2)
        ev = sorted({by_r1[(h, o)] for o in bridges} | {by_r2[(o, t)] for o in bridges})
        facts.append(Fact(h, t, "r3", tuple(ev)))
    facts.sort(key=lambda f: (f.head, f.tail, f.relation))
    return Document(title, sentences, [Entity(m) for m in mentions], facts)


def random_document(
    rng: np.random.Generator,
    n_sentences: tuple[int, int] = (2, 4),
    n_entities: tuple[int, int] = (3, 5),
    max_mentions: int = 3,
    fact_rate: float = 0.3,
    title: str = "random",
) -> Document:
    """Unstructured toy document for oracle and gradient tests.

    Entities get 1 to ``max_mentions`` mentions of one or two tokens, placed
    in random sentences (two mentions of one entity may share a sentence).
    Each ordered pair carries each relation of :data:`RELATIONS` with
    probability ``fact_rate``.
    """
    n_sent = int(rng.integers(n_sentences[0], n_sentences[1] + 1))
    n_ent = int(rng.integers(n_entities[0], n_entities[1] + 1))
    names = rng.choice(NAME_POOL, size=n_ent, replace=False)
    types = [str(rng.choice(TYPES)) for _ in range(n_ent)]
    slots: list[list[tuple[int, int]]] = [[] for _ in range(n_sent)]
    for e in range(n_ent):
        for _ in range(int(rng.integers(1, max_mentions + 1))):
            slots[int(rng.integers(n_sent))].append((e, int(rng.integers(1, 3))))

    mentions: list[list[Mention]] = [[] for _ in range(n_ent)]
    sentences = []
    for sid, placed in enumerate(slots):
        tokens: list[str] = []
        for k in rng.permutation(len(placed)):
            e, width = placed[k]
            tokens += [str(rng.choice(FILLERS)) for _ in range(int(rng.integers(0, 3)))]
            words = [f"ent{names[e]}"] + ["jr"] * (width - 1)
            mentions[e].append(Mention(sid, len(tokens), len(tokens) + width, " ".join(words), types[e]))
            tokens += words
        tokens.append(".")
        sentences.append(tokens)

    facts = [
        Fact(h, t, r, ())
        for h in range(n_ent)
        for t in range(n_ent)
        if h != t
        for r in RELATIONS
        if rng.random() < fact_rate
    ]
    return Document(title, sentences, [Entity(m) for m in mentions], facts)


def synth_reasoning_corpus(
    n_docs: int,
    n_entities: int,
    seed: int,
    positive_rate: float = 0.5,
    noise_edges: int = 1,
    prefix: str = "synth",
) -> list[Document]:
    rng = make_rng(seed)
    return [
        make_document(rng, n_entities, f"{prefix}-{seed}-{i}", positive_rate, noise_edges) for i in range(n_docs)
    ]


def write_synth_splits(
    out_dir: str | Path,
    seed: int,
    n_entities: int = 7,
    n_train: int = 200,
    n_dev: int = 50,
    n_test: int = 50,
) -> dict[str, Path]:
    """Write ``train/dev/test.json`` and ``rel2id.txt``; returns the paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    paths = {}
    for offset, (split, n) in enumerate((("train", n_train), ("dev", n_dev), ("test", n_test))):
        docs = synth_reasoning_corpus(n, n_entities, seed * 3 + offset, prefix=f"synth-{split}")
        paths[split] = out / f"{split}.json"
        serialize_corpus(docs, paths[split])
    paths["relations"] = out / "rel2id.txt"
    paths["relations"].write_text("".join(f"{r} {i}\n" for i, r in enumerate(RELATIONS)))
    return paths
