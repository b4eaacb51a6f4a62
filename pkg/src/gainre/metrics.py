"""Evaluation metrics for document-level relation extraction.

A fact is keyed by ``(doc_id, head, tail, relation)``. Predictions carry a
score; a prediction counts as positive at threshold ``θ`` when its score is
strictly greater than ``θ``, so ``θ = 1`` never predicts anything.
"""

from __future__ import annotations

import json
import warnings
from collections import defaultdict
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Iterator, Mapping, Sequence

from .docred import Document
from .errors import ArgumentError, ParseError

Key = tuple[str, int, int, Hashable]


@dataclass(frozen=True)
class Prediction:
    doc_id: str
    head: int
    tail: int
    relation: Hashable
    score: float

    @property
    def key(self) -> Key:
        return (self.doc_id, self.head, self.tail, self.relation)


class PredictionSet:
    """Scored relation triples with unique keys and scores in ``[0, 1]``."""

    def __init__(self, predictions: Iterable[Prediction] = ()):
        self._items: dict[Key, Prediction] = {}
        for p in predictions:
            self.add(p)

    def add(self, p: Prediction) -> None:
        if not 0.0 <= p.score <= 1.0:
            raise ArgumentError(f"score {p.score} for {p.key} outside [0, 1]")
        if p.key in self._items:
            raise ArgumentError(f"duplicate prediction {p.key}")
        self._items[p.key] = p

    def __iter__(self) -> Iterator[Prediction]:
        return iter(self._items.values())

    def __len__(self) -> int:
        return len(self._items)

    def __contains__(self, key) -> bool:
        return key in self._items

    def above(self, threshold: float) -> set[Key]:
        return {k for k, p in self._items.items() if p.score > threshold}

    def filter(self, keep) -> "PredictionSet":
        return PredictionSet(p for p in self if keep(p))

    def scores(self) -> list[float]:
        return [p.score for p in self]

    def to_jsonl(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for p in sorted(self, key=lambda p: (p.doc_id, p.head, p.tail, str(p.relation))):
                rec = {"title": p.doc_id, "h_idx": p.head, "t_idx": p.tail, "r": p.relation, "score": p.score}
                fh.write(json.dumps(rec) + "\n")

    @classmethod
    def from_jsonl(cls, path: str | Path) -> "PredictionSet":
        out = cls()
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, 1):
                if not line.strip():
                    continue
                try:
                    rec = json.loads(line)
                    out.add(Prediction(rec["title"], int(rec["h_idx"]), int(rec["t_idx"]), rec["r"], float(rec["score"])))
                except (KeyError, ValueError, TypeError) as exc:
                    raise ParseError(f"{path}:{lineno}: bad prediction record ({exc})") from exc
        return out


@dataclass
class FactIndex:
    """Gold facts plus the per-entity data the metric variants need."""

    gold: set[Key]
    entity_names: dict[str, list[frozenset[str]]] = field(default_factory=dict)
    entity_sentences: dict[str, list[frozenset[int]]] = field(default_factory=dict)
    train_signatures: set[tuple] = field(default_factory=set)

    @classmethod
    def from_documents(cls, docs: Sequence[Document], train_docs: Sequence[Document] = ()) -> "FactIndex":
        gold = {(d.title, f.head, f.tail, f.relation) for d in docs for f in d.facts}
        names = {d.title: [e.names for e in d.entities] for d in docs}
        sents = {d.title: [e.sentences for e in d.entities] for d in docs}
        return cls(gold, names, sents, train_signatures(train_docs))

    def signature(self, key: Key) -> tuple:
        doc, h, t, r = key
        names = self.entity_names[doc]
        return (names[h], names[t], r)


def train_signatures(docs: Sequence[Document]) -> set[tuple]:
    """Signature used by the Ign filter: (head names, tail names, relation)."""
    return {(d.entities[f.head].names, d.entities[f.tail].names, f.relation) for d in docs for f in d.facts}


# ---------------------------------------------------------------------------
# F1 family
# ---------------------------------------------------------------------------


def prf(n_correct: int, n_pred: int, n_gold: int) -> dict[str, float]:
    """Micro precision/recall/F1 with the empty-set conventions.

    No predictions and no gold scores 1 across the board; an empty side
    facing a non-empty one scores 0.
    """
    precision = n_correct / n_pred if n_pred else (1.0 if n_gold == 0 else 0.0)
    recall = n_correct / n_gold if n_gold else (1.0 if n_pred == 0 else 0.0)
    f1 = 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0
    return {"precision": precision, "recall": recall, "f1": f1}


def f1(pred: PredictionSet, gold: set[Key], threshold: float) -> dict[str, float]:
    predicted = pred.above(threshold)
    return prf(len(predicted & gold), len(predicted), len(gold))


def ignored_keys(gold: set[Key], index: FactIndex) -> set[Key]:
    """Gold facts whose signature also appears in the training split."""
    return {k for k in gold if index.signature(k) in index.train_signatures}


def ign_f1(pred: PredictionSet, index: FactIndex, threshold: float) -> dict[str, float]:
    removed = ignored_keys(index.gold, index)
    kept = pred.filter(lambda p: p.key not in removed)
    return f1(kept, index.gold - removed, threshold)


def best_threshold(pred: PredictionSet, gold: set[Key]) -> tuple[float, float]:
    """Threshold in ``[0, 1]`` maximising F1, and that F1.

    Candidates are 0 and every distinct score; F1 only changes there.
    Ties go to the larger threshold.
    """
    ranked = sorted(pred, key=lambda p: -p.score)
    n_gold = len(gold)
    best = (1.0, prf(0, 0, n_gold)["f1"])
    correct = taken = 0
    i = 0
    while i < len(ranked):
        score = ranked[i].score
        while i < len(ranked) and ranked[i].score == score:
            correct += ranked[i].key in gold
            taken += 1
            i += 1
        # everything down to this block is predicted once θ drops below it
        nxt = ranked[i].score if i < len(ranked) else 0.0
        if nxt == score:
            continue
        value = prf(correct, taken, n_gold)["f1"]
        if value > best[1]:
            best = (nxt, value)
    return best


def auc(pred: PredictionSet, gold: set[Key]) -> float:
    """Area under the step-interpolated precision-recall curve.

    Predictions are ranked by score; equal scores enter together as one
    block, so the value does not depend on tie order.
    """
    if not gold:
        warnings.warn("AUC with an empty gold set is defined as 0", RuntimeWarning, stacklevel=2)
        return 0.0
    ranked = sorted(pred, key=lambda p: -p.score)
    area = 0.0
    correct = taken = 0
    prev_recall = 0.0
    i = 0
    while i < len(ranked):
        score = ranked[i].score
        while i < len(ranked) and ranked[i].score == score:
            correct += ranked[i].key in gold
            taken += 1
            i += 1
        recall = correct / len(gold)
        area += (recall - prev_recall) * (correct / taken)
        prev_recall = recall
    return area


def ign_auc(pred: PredictionSet, index: FactIndex) -> float:
    removed = ignored_keys(index.gold, index)
    return auc(pred.filter(lambda p: p.key not in removed), index.gold - removed)


def is_intra(key: Key, index: FactIndex) -> bool:
    doc, h, t, _ = key
    sents = index.entity_sentences[doc]
    return bool(sents[h] & sents[t])


def intra_inter_f1(pred: PredictionSet, index: FactIndex, threshold: float) -> dict[str, float]:
    out = {}
    for bucket, want in (("intra", True), ("inter", False)):
        gold = {k for k in index.gold if is_intra(k, index) == want}
        part = pred.filter(lambda p: is_intra(p.key, index) == want)
        scores = f1(part, gold, threshold)
        out[f"{bucket}_f1"] = scores["f1"]
        out[f"{bucket}_precision"] = scores["precision"]
        out[f"{bucket}_recall"] = scores["recall"]
    return out


def inference_facts(gold: set[Key]) -> set[Key]:
    """Gold facts taking part in some ``h -r1-> o -r2-> t`` plus ``h -r3-> t`` pattern."""
    out_edges: dict[str, dict[int, dict[int, set]]] = defaultdict(lambda: defaultdict(lambda: defaultdict(set)))
    for doc, h, t, r in gold:
        out_edges[doc][h][t].add(r)
    considered = set()
    for doc, adj in out_edges.items():
        for h, tails in adj.items():
            for t, direct in tails.items():
                bridges = [o for o in adj[h] if o != t and t in adj.get(o, {})]
                if not bridges:
                    continue
                considered.update((doc, h, t, r) for r in direct)
                for o in bridges:
                    considered.update((doc, h, o, r) for r in adj[h][o])
                    considered.update((doc, o, t, r) for r in adj[o][t])
    return considered


def infer_f1(pred: PredictionSet, gold: set[Key], threshold: float, restrict: str = "keys") -> dict:
    """F1 over the facts engaged in two-hop reasoning patterns.

    ``restrict="keys"`` scores only predictions whose full key is a
    considered gold fact. ``restrict="pairs"`` keeps every prediction on a
    considered (doc, head, tail) pair, which lets wrong relations on those
    pairs count against precision.
    """
    considered = inference_facts(gold)
    if restrict == "keys":
        part = pred.filter(lambda p: p.key in considered)
    elif restrict == "pairs":
        pairs = {k[:3] for k in considered}
        part = pred.filter(lambda p: p.key[:3] in pairs)
    else:
        raise ArgumentError(f"restrict must be 'keys' or 'pairs', got {restrict!r}")
    if not considered:
        return {"infer_f1": 0.0, "precision": 0.0, "recall": 0.0, "defined": False}
    scores = f1(part, considered, threshold)
    return {"infer_f1": scores["f1"], "precision": scores["precision"], "recall": scores["recall"], "defined": True}


def restrict_relation(pred: PredictionSet, gold: set[Key], relation: Hashable) -> tuple[PredictionSet, set[Key]]:
    return pred.filter(lambda p: p.relation == relation), {k for k in gold if k[3] == relation}


def report(pred: PredictionSet, index: FactIndex, threshold: float | None = None) -> dict:
    """All metrics at one threshold (chosen to maximise F1 when not given)."""
    chosen = threshold if threshold is not None else best_threshold(pred, index.gold)[0]
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        area = auc(pred, index.gold)
        ign_area = ign_auc(pred, index)
    return {
        "threshold": chosen,
        **{k: v for k, v in f1(pred, index.gold, chosen).items()},
        "ign_f1": ign_f1(pred, index, chosen)["f1"],
        "auc": area,
        "ign_auc": ign_area,
        **intra_inter_f1(pred, index, chosen),
        **{k: v for k, v in infer_f1(pred, index.gold, chosen).items()},
    }


def format_report(metrics: Mapping) -> str:
    lines = []
    for k in ("threshold", "f1", "precision", "recall", "ign_f1", "auc", "ign_auc", "intra_f1", "inter_f1", "infer_f1"):
        if k in metrics:
            lines.append(f"{k:>10}: {metrics[k]:.4f}")
    if "defined" in metrics and not metrics["defined"]:
        lines.append("  infer_f1 undefined: no two-hop pattern in gold")
    return "\n".join(lines)
