"""Training loop, evaluation and checkpoint plumbing."""

from __future__ import annotations

import dataclasses
import json
import logging
import math
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Mapping, Sequence

import numpy as np

from . import __version__
from .autodiff import AdamW, GradcheckReport, Tape, check_gradients, load_checkpoint, save_checkpoint
from .docred import Document, Vocab, build_vocab, encode_document, sample_pairs
from .errors import CheckpointError, ConfigError, GainError
from .metrics import FactIndex, Prediction, PredictionSet, report
from .model import GAIN, DocGraphs, ModelConfig, parameter_shapes, prepare

log = logging.getLogger(__name__)

VOCAB_FIELDS = ("vocab_size", "n_entity_types", "max_entities", "n_relations")


class TrainingError(GainError, RuntimeError):
    pass


@dataclass
class TrainConfig:
    batch_size: int = 32
    learning_rate: float = 1e-3
    weight_decay: float = 1e-4
    epochs: int = 10
    seed: int = 0
    eval_every: int = 1
    patience: int = 10
    neg_ratio: float = 0.25
    min_count: int = 1

    def __post_init__(self) -> None:
        for k in ("batch_size", "epochs", "eval_every", "patience", "min_count"):
            if getattr(self, k) <= 0:
                raise ConfigError(f"{k} must be positive")
        for k in ("learning_rate", "weight_decay", "neg_ratio"):
            if not getattr(self, k) > 0:
                raise ConfigError(f"{k} must be positive")
        if self.seed < 0:
            raise ConfigError("seed must be non-negative")

    @classmethod
    def from_dict(cls, d: Mapping) -> "TrainConfig":
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**dict(d))


@dataclass
class RunLog:
    """Line-delimited training records: ``step`` and ``eval`` entries.

    Each record carries a wall-clock ``time`` in memory. :meth:`write` keeps
    the file reproducible by moving the stamps to :meth:`write_timing`.
    """

    records: list[dict] = field(default_factory=list)

    def add(self, **record) -> None:
        record["time"] = time.time()
        self.records.append(record)

    @property
    def steps(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "step"]

    @property
    def evals(self) -> list[dict]:
        return [r for r in self.records if r["kind"] == "eval"]

    def best_eval(self) -> dict | None:
        """First evaluation with the highest dev Ign F1."""
        best = None
        for r in self.evals:
            if best is None or r["metrics"]["ign_f1"] > best["metrics"]["ign_f1"]:
                best = r
        return best

    def without_timestamps(self) -> list[dict]:
        return [{k: v for k, v in r.items() if k != "time"} for r in self.records]

    def write(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.without_timestamps():
                fh.write(json.dumps(r, sort_keys=True) + "\n")

    def write_timing(self, path: str | Path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            for r in self.records:
                fh.write(json.dumps({"kind": r["kind"], "step": r["step"], "time": r.get("time")}) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunLog":
        with open(path, encoding="utf-8") as fh:
            return cls([json.loads(line) for line in fh if line.strip()])


@dataclass
class TrainResult:
    model: GAIN
    vocab: Vocab
    runlog: RunLog
    best_epoch: int
    threshold: float
    checkpoint: Path | None = None


def seeded_streams(seed: int, n: int) -> list[np.random.Generator]:
    """Independent Philox streams derived from one seed."""
    return [np.random.Generator(np.random.Philox(s)) for s in np.random.SeedSequence(seed).spawn(n)]


def complete_config(cfg: ModelConfig, vocab: Vocab) -> ModelConfig:
    return dataclasses.replace(
        cfg,
        vocab_size=len(vocab.words),
        n_entity_types=len(vocab.types),
        max_entities=vocab.max_entities,
        n_relations=len(vocab.relations),
    )


def prepare_corpus(docs: Iterable[Document], vocab: Vocab, cfg: ModelConfig) -> list[DocGraphs]:
    out = []
    for doc in docs:
        if len(doc.entities) < 2:
            log.info("skipping %r: fewer than two entities, no candidate pairs", doc.title)
            continue
        out.append(prepare(encode_document(doc, vocab), cfg))
    return out


def predict(model: GAIN, graphs: Sequence[DocGraphs], relation_names: Sequence[str]) -> PredictionSet:
    """Score every ordered entity pair of every document (inference mode)."""
    preds = PredictionSet()
    for g in graphs:
        out = model.forward(g, training=False)
        probs = out.probs.data
        for (h, t), row in zip(out.pairs, probs):
            for r, score in enumerate(row):
                preds.add(Prediction(g.title, int(h), int(t), relation_names[r], float(score)))
    return preds


def evaluate(
    model: GAIN,
    vocab: Vocab,
    docs: Sequence[Document],
    train_docs: Sequence[Document] = (),
    threshold: float | None = None,
) -> tuple[PredictionSet, dict]:
    graphs = prepare_corpus(docs, vocab, model.config)
    preds = predict(model, graphs, vocab.relation_names())
    index = FactIndex.from_documents(docs, train_docs)
    return preds, report(preds, index, threshold)


def checkpoint_meta(model: GAIN, vocab: Vocab, **extra) -> dict:
    return {
        "code_version": __version__,
        "model_config": model.config.to_dict(),
        "vocab": vocab.to_dict(),
        **extra,
    }


def save_model(path: str | Path, model: GAIN, vocab: Vocab, seed: int, state: Mapping[str, np.ndarray] | None = None, **extra) -> None:
    save_checkpoint(path, state if state is not None else model.state_dict(), seed, checkpoint_meta(model, vocab, **extra))


def load_model(path: str | Path, expected: ModelConfig | None = None) -> tuple[GAIN, Vocab, dict]:
    """Rebuild a model from a checkpoint.

    When ``expected`` is given, its architecture must match the checkpoint's
    parameter set exactly; a mismatch lists missing and extra names.
    """
    state, header = load_checkpoint(path)
    meta = header["meta"]
    cfg = ModelConfig.from_dict(meta["model_config"])
    vocab = Vocab.from_dict(meta["vocab"])
    if expected is not None:
        cfg = complete_config(expected, vocab)
    names = set(parameter_shapes(cfg))
    missing, extra = sorted(names - set(state)), sorted(set(state) - names)
    if missing or extra:
        raise CheckpointError(f"checkpoint {path} does not fit the config: missing {missing}, extra {extra}")
    model = GAIN.initialise(cfg, np.random.default_rng(0))
    model.load_state(state)
    return model, vocab, header


def train(
    train_docs: Sequence[Document],
    dev_docs: Sequence[Document],
    model_config: ModelConfig,
    train_config: TrainConfig,
    out_dir: str | Path | None = None,
    relations: dict[str, int] | None = None,
    vectors_path: str | Path | None = None,
    vocab: Vocab | None = None,
    stop_when: Callable[[dict], bool] | None = None,
) -> TrainResult:
    """Train with AdamW, evaluating on dev and keeping the best Ign F1 state.

    A batch is a set of documents whose gradients are summed before one
    optimizer step. Deterministic for a fixed seed. ``stop_when`` sees each
    dev metric report and ends training early when it returns true.
    """
    tc = train_config
    if not train_docs or not dev_docs:
        raise ConfigError("training needs non-empty train and dev splits")
    init_rng, sample_rng, dropout_rng, order_rng = seeded_streams(tc.seed, 4)
    if vocab is None:
        vocab, table = build_vocab(
            train_docs,
            min_count=tc.min_count,
            relations=relations,
            vectors_path=vectors_path,
            word_dim=model_config.word_dim,
            rng=init_rng,
        )
    else:
        table = None
    cfg = complete_config(model_config, vocab)
    model = GAIN.initialise(cfg, init_rng, table)

    train_graphs = prepare_corpus(train_docs, vocab, cfg)
    dev_graphs = prepare_corpus(dev_docs, vocab, cfg)
    dev_index = FactIndex.from_documents(dev_docs, train_docs)
    relation_names = vocab.relation_names()

    opt = AdamW(model.params, lr=tc.learning_rate, weight_decay=tc.weight_decay)
    runlog = RunLog()
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)

    best_state, best_score, best_epoch, best_threshold = model.state_dict(), -math.inf, 0, 0.5
    stale = 0
    step = 0
    for epoch in range(1, tc.epochs + 1):
        order = order_rng.permutation(len(train_graphs))
        for start in range(0, len(order), tc.batch_size):
            opt.zero_grad()
            losses = []
            for i in order[start : start + tc.batch_size]:
                g = train_graphs[i]
                pair_idx = sample_pairs(g.encoded, tc.neg_ratio, sample_rng, training=True)
                with Tape() as tape:
                    loss = model.forward(g, pair_idx, training=True, rng=dropout_rng, with_loss=True).loss
                value = loss.item()
                if not math.isfinite(value):
                    _dump_failure(out, g, step, epoch, value)
                    raise TrainingError(f"non-finite loss {value} on document {g.title!r} (epoch {epoch}, step {step})")
                tape.backward(loss)
                losses.append(value)
            opt.step()
            step += 1
            runlog.add(kind="step", step=step, epoch=epoch, loss=float(np.mean(losses)), docs=len(losses))

        if epoch % tc.eval_every == 0 or epoch == tc.epochs:
            preds = predict(model, dev_graphs, relation_names)
            metrics = report(preds, dev_index)
            runlog.add(kind="eval", step=step, epoch=epoch, metrics=metrics)
            log.info("epoch %d step %d dev ign_f1 %.4f f1 %.4f", epoch, step, metrics["ign_f1"], metrics["f1"])
            if metrics["ign_f1"] > best_score:
                best_score, best_epoch, best_threshold = metrics["ign_f1"], epoch, metrics["threshold"]
                best_state = model.state_dict()
                stale = 0
            else:
                stale += 1
                if stale >= tc.patience:
                    log.info("early stop at epoch %d (best epoch %d)", epoch, best_epoch)
                    break
            if stop_when is not None and stop_when(metrics):
                log.info("stop condition met at epoch %d", epoch)
                break

    model.load_state(best_state)
    ckpt = None
    if out is not None:
        ckpt = out / "best.ckpt"
        save_model(
            ckpt,
            model,
            vocab,
            tc.seed,
            train_config=dataclasses.asdict(tc),
            best_epoch=best_epoch,
            threshold=best_threshold,
        )
        runlog.write(out / "runlog.jsonl")
        runlog.write_timing(out / "timing.jsonl")
    return TrainResult(model, vocab, runlog, best_epoch, best_threshold, ckpt)


def gradcheck_model(
    docs: Sequence[Document],
    model_config: ModelConfig,
    seed: int = 0,
    relations: dict[str, int] | None = None,
) -> list[tuple[str, GradcheckReport]]:
    """Finite-difference check of every parameter's gradient, one report per document.

    Dropout is forced off so the loss is a deterministic function of the
    weights. Each document gets a freshly initialised model.
    """
    vocab, table = build_vocab(docs, relations=relations, word_dim=model_config.word_dim, rng=np.random.default_rng(seed))
    cfg = complete_config(dataclasses.replace(model_config, dropout=0.0), vocab)
    graphs_list = prepare_corpus(docs, vocab, cfg)
    out = []
    for graphs, rng in zip(graphs_list, seeded_streams(seed, len(graphs_list))):
        model = GAIN.initialise(cfg, rng, table)
        report = check_gradients(lambda: model.forward(graphs, with_loss=True).loss, model.params)
        out.append((graphs.title, report))
    return out


def _dump_failure(out: Path | None, g: DocGraphs, step: int, epoch: int, value: float) -> None:
    payload = {"title": g.title, "step": step, "epoch": epoch, "loss": repr(value), "n_tokens": g.encoded.n_tokens}
    log.error("non-finite loss: %s", payload)
    if out is not None:
        (out / "failure.json").write_text(json.dumps(payload, indent=2))
