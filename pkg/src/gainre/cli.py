"""Command-line entry point: ``gainre <subcommand> [flags]``.

Exit codes: 0 success, 1 invalid input (bad flags, files, configs or
checkpoints), 2 runtime failure (including a failed gradient check).
Every run writes ``manifest.json`` into ``--out`` with the argument
vector, resolved configuration, seed and code version, so a run can be
repeated from its manifest alone.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import sys
from pathlib import Path
from typing import Sequence

from . import __version__
from .autodiff import make_rng, ops
from .docred import Document, build_vocab, encode_document, load_relation_map, parse_corpus
from .errors import GainError, NumericError, TapeError
from .graphs import build_eg, build_hmg, enumerate_paths, graph_dump
from .metrics import format_report
from .model import ModelConfig, prepare
from .synth import RELATIONS, random_document, write_synth_splits
from .trainer import (
    TrainConfig,
    TrainingError,
    evaluate,
    gradcheck_model,
    load_model,
    train,
)

log = logging.getLogger("gainre")

ABLATIONS = {"hmg": "no_hmg", "inference": "no_inference", "docnode": "no_document_node"}
MODEL_KEYS = {f.name for f in dataclasses.fields(ModelConfig)}
TRAIN_KEYS = {f.name for f in dataclasses.fields(TrainConfig)}
GRADCHECK_SIZES = dict(
    word_dim=4, type_dim=2, coref_dim=2, encoder_hidden=3, gcn_hidden=5, edge_dim=3, classifier_hidden=4
)
GRADCHECK_TOL = 1e-4
INPUT_ERRORS = (GainError, FileNotFoundError, IsADirectoryError, NotADirectoryError, PermissionError, json.JSONDecodeError)


class UsageError(GainError, ValueError):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------


def read_config(path: str | None) -> tuple[dict, dict]:
    """Split a flat JSON config into model and training fields."""
    if path is None:
        return {}, {}
    raw = json.loads(Path(path).read_text(encoding="utf-8"))
    if not isinstance(raw, dict):
        raise UsageError(f"{path}: config must be a JSON object")
    unknown = set(raw) - MODEL_KEYS - TRAIN_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown config keys {sorted(unknown)}")
    return {k: v for k, v in raw.items() if k in MODEL_KEYS}, {k: v for k, v in raw.items() if k in TRAIN_KEYS}


def model_config(args, base: dict | None = None) -> ModelConfig:
    model_kw, _ = read_config(args.config)
    merged = {**(base or {}), **model_kw}
    for flag in args.ablate or ():
        merged[ABLATIONS[flag]] = True
    return ModelConfig.from_dict(merged)


def train_config(args) -> TrainConfig:
    _, train_kw = read_config(args.config)
    if args.seed is not None:
        train_kw["seed"] = args.seed
    return TrainConfig.from_dict(train_kw)


def file_digest(path: str | Path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def write_manifest(out: Path, argv: Sequence[str], command: str, seed: int | None, config: dict, inputs=(), outputs=()):
    manifest = {
        "command": command,
        "argv": list(argv),
        "seed": seed,
        "code_version": __version__,
        "config": config,
        "inputs": {str(p): file_digest(p) for p in inputs},
        "outputs": sorted(str(Path(p).relative_to(out)) for p in outputs),
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return manifest


def load_docs(path: str | None, flag: str) -> list[Document]:
    if path is None:
        raise UsageError(f"{flag} is required")
    return parse_corpus(path)


def relations_for(args) -> dict[str, int] | None:
    return load_relation_map(args.relations) if args.relations else None


def eval_split(args) -> tuple[str, str]:
    for flag in ("test", "dev"):
        if getattr(args, flag):
            return flag, getattr(args, flag)
    raise UsageError("one of --test or --dev is required")


# ---------------------------------------------------------------------------
# subcommands
# ---------------------------------------------------------------------------


def cmd_train(args, out: Path, argv) -> int:
    train_docs = load_docs(args.train, "--train")
    dev_docs = load_docs(args.dev, "--dev")
    mc, tc = model_config(args), train_config(args)
    result = train(train_docs, dev_docs, mc, tc, out_dir=out, relations=relations_for(args), vectors_path=args.vectors)
    outputs = [out / "best.ckpt", out / "runlog.jsonl", out / "timing.jsonl"]
    summary = {"best_epoch": result.best_epoch, "threshold": result.threshold, "dev": result.runlog.best_eval()["metrics"]}
    if args.test:
        test_docs = parse_corpus(args.test)
        threshold = args.threshold if args.threshold is not None else result.threshold
        preds, rep = evaluate(result.model, result.vocab, test_docs, train_docs, threshold)
        preds.to_jsonl(out / "test_predictions.jsonl")
        summary["test"] = rep
        outputs.append(out / "test_predictions.jsonl")
    (out / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    outputs.append(out / "summary.json")
    inputs = [p for p in (args.train, args.dev, args.test, args.relations, args.vectors, args.config) if p]
    write_manifest(
        out,
        argv,
        "train",
        tc.seed,
        {"model": result.model.config.to_dict(), "train": dataclasses.asdict(tc)},
        inputs,
        outputs,
    )
    print(f"best epoch {result.best_epoch}, dev threshold {result.threshold:.4f}")
    print(format_report(summary["dev"]))
    if "test" in summary:
        print("test:")
        print(format_report(summary["test"]))
    return 0


def cmd_eval(args, out: Path, argv) -> int:
    if not args.checkpoint:
        raise UsageError("--checkpoint is required")
    expected = model_config(args) if (args.config or args.ablate) else None
    model, vocab, header = load_model(args.checkpoint, expected)
    split, path = eval_split(args)
    docs = parse_corpus(path)
    train_docs = parse_corpus(args.train) if args.train else []
    threshold = args.threshold
    if threshold is None and args.use_checkpoint_threshold:
        threshold = header["meta"].get("threshold")
    preds, rep = evaluate(model, vocab, docs, train_docs, threshold)
    preds.to_jsonl(out / "predictions.jsonl")
    (out / "report.json").write_text(json.dumps(rep, indent=2, sort_keys=True) + "\n")
    inputs = [p for p in (args.checkpoint, path, args.train, args.config) if p]
    write_manifest(
        out, argv, "eval", header["seed"], {"model": model.config.to_dict(), "split": split, "threshold": threshold},
        inputs, [out / "predictions.jsonl", out / "report.json"],
    )
    print(format_report(rep))
    return 0


def _graph_docs(args) -> tuple[list[Document], list[str]]:
    docs, inputs = [], []
    for flag in ("train", "dev", "test"):
        path = getattr(args, flag)
        if path:
            docs += parse_corpus(path)
            inputs.append(path)
    if not inputs:
        raise UsageError("give at least one of --train, --dev, --test")
    return docs, inputs


def _encoder_vocab(docs: Sequence[Document], args):
    return build_vocab(docs, relations=relations_for(args), word_dim=1)[0]


def cmd_build_graph(args, out: Path, argv) -> int:
    docs, inputs = _graph_docs(args)
    vocab = _encoder_vocab(docs, args)
    graph_dir = out / "graphs"
    graph_dir.mkdir(exist_ok=True)
    outputs = []
    no_doc = "docnode" in (args.ablate or ())
    for i, doc in enumerate(docs):
        hmg = build_hmg(encode_document(doc, vocab), ablate_document_node=no_doc)
        eg = build_eg(hmg)
        path = graph_dir / f"{i:05d}.json"
        path.write_text(json.dumps(graph_dump(doc.title, hmg, eg, enumerate_paths(eg)), sort_keys=True) + "\n")
        outputs.append(path)
        counts = ", ".join(f"{k} {len(v)}" for k, v in hmg.edges.items())
        print(f"{doc.title}: {hmg.n_mentions} mentions, {counts}, {len(eg.edges)} entity edges")
    write_manifest(out, argv, "build-graph", None, {"ablate": sorted(args.ablate or ())}, inputs, outputs)
    return 0


def _gold_by_pair(doc: Document) -> dict[tuple[int, int], list[str]]:
    gold: dict[tuple[int, int], list[str]] = {}
    for f in doc.facts:
        gold.setdefault((f.head, f.tail), []).append(f.relation)
    return {k: sorted(v) for k, v in gold.items()}


def cmd_inspect_paths(args, out: Path, argv) -> int:
    docs, inputs = _graph_docs(args)
    if args.title:
        docs = [d for d in docs if d.title in set(args.title)]
        if not docs:
            raise UsageError(f"no document titled {args.title}")
    model = vocab = None
    if args.checkpoint:
        model, vocab, _ = load_model(args.checkpoint)
        inputs.append(args.checkpoint)
        if model.config.no_inference:
            raise UsageError("checkpoint was trained without the inference module; it has no path attention")
    else:
        vocab = _encoder_vocab(docs, args)
    listing = []
    for doc in docs:
        names = [sorted(e.names)[0] for e in doc.entities]
        gold = _gold_by_pair(doc)
        enc = encode_document(doc, vocab)
        cfg = model.config if model else ModelConfig(no_document_node=True)
        graphs = prepare(enc, cfg)
        E = model.node_features(graphs)[0] if model else None
        print(f"== {doc.title}")
        for (h, t), via in sorted(graphs.paths.items()):
            if not via:
                continue
            weights = None
            if model is not None:
                e_h, e_t = (ops.reshape(ops.gather_rows(E, [i]), (-1,)) for i in (h, t))
                reps = [model.path_representation(E, h, t, o, graphs.paths) for o in via]
                weights = model.path_attention(e_h, e_t, reps).data.tolist()
            entry = {
                "head": h,
                "tail": t,
                "gold": gold.get((h, t), []),
                "paths": [
                    {"via": o, "first": gold.get((h, o), []), "second": gold.get((o, t), []), **({"attention": weights[k]} if weights else {})}
                    for k, o in enumerate(via)
                ],
            }
            listing.append({"title": doc.title, **entry})
            label = ",".join(entry["gold"]) or "-"
            print(f"  {names[h]} -> {names[t]} [{label}]")
            for p in entry["paths"]:
                first, second = ",".join(p["first"]) or "-", ",".join(p["second"]) or "-"
                att = f"  attention {p['attention']:.3f}" if "attention" in p else ""
                print(f"      via {names[p['via']]}: {first} then {second}{att}")
    (out / "paths.json").write_text(json.dumps(listing, indent=2, sort_keys=True) + "\n")
    write_manifest(out, argv, "inspect-paths", None, {"titles": args.title or []}, inputs, [out / "paths.json"])
    return 0


def cmd_gradcheck(args, out: Path, argv) -> int:
    seed = args.seed if args.seed is not None else 0
    cfg = model_config(args, base=GRADCHECK_SIZES)
    rng = make_rng(seed)
    docs = [random_document(rng, title=f"toy-{i}") for i in range(args.n_docs)]
    reports = gradcheck_model(docs, cfg, seed, relations={r: i for i, r in enumerate(RELATIONS)})
    worst = 0.0
    rows = []
    for title, rep in reports:
        print(f"{title}: max relative error {rep.max_error:.3e} ({rep.worst})")
        worst = max(worst, rep.max_error)
        rows.append({"title": title, "max_error": rep.max_error, "worst": rep.worst, "errors": rep.errors})
    passed = worst < GRADCHECK_TOL
    print(f"max relative gradient error {worst:.3e} ({'pass' if passed else 'FAIL'}, tolerance {GRADCHECK_TOL:g})")
    (out / "gradcheck.json").write_text(json.dumps({"max_error": worst, "passed": passed, "documents": rows}, indent=2, sort_keys=True) + "\n")
    write_manifest(out, argv, "gradcheck", seed, {"model": dataclasses.asdict(cfg), "n_docs": args.n_docs}, [], [out / "gradcheck.json"])
    return 0 if passed else 2


def cmd_synth(args, out: Path, argv) -> int:
    if args.task != "two-hop":
        raise UsageError(f"unknown synthetic task {args.task!r}")
    seed = args.seed if args.seed is not None else 0
    if args.n_entities < 3:
        raise UsageError("--n-entities must be at least 3")
    paths = write_synth_splits(out, seed, args.n_entities, args.n_train, args.n_dev, args.n_test)
    for split, path in paths.items():
        print(f"{split}: {path}")
    config = {"task": args.task, "n_entities": args.n_entities, "n_train": args.n_train, "n_dev": args.n_dev, "n_test": args.n_test}
    write_manifest(out, argv, "synth", seed, config, [], paths.values())
    return 0


COMMANDS = {
    "train": cmd_train,
    "eval": cmd_eval,
    "build-graph": cmd_build_graph,
    "inspect-paths": cmd_inspect_paths,
    "gradcheck": cmd_gradcheck,
    "synth": cmd_synth,
}


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="flat JSON file of model and training fields")
    common.add_argument("--train", help="training split (DocRED JSON)")
    common.add_argument("--dev", help="development split")
    common.add_argument("--test", help="test split")
    common.add_argument("--relations", help="relation map: 'name id' lines or a JSON object")
    common.add_argument("--seed", type=int)
    common.add_argument("--ablate", action="append", choices=sorted(ABLATIONS), help="repeatable")
    common.add_argument("--threshold", type=float)
    common.add_argument("--out", default="gainre-out", help="output directory (default: %(default)s)")
    common.add_argument("-q", "--quiet", action="store_true")

    parser = _Parser(prog="gainre", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    p = sub.add_parser("train", parents=[common], help="train and keep the best dev Ign F1 checkpoint")
    p.add_argument("--vectors", help="pretrained word vectors, one token and its floats per line")
    p = sub.add_parser("eval", parents=[common], help="score a split with a checkpoint")
    p.add_argument("--checkpoint")
    p.add_argument("--use-checkpoint-threshold", action="store_true", help="reuse the dev threshold stored at training time")
    sub.add_parser("build-graph", parents=[common], help="dump mention and entity graphs per document")
    p = sub.add_parser("inspect-paths", parents=[common], help="list two-hop paths, with attention when a checkpoint is given")
    p.add_argument("--checkpoint")
    p.add_argument("--title", action="append", help="restrict to these document titles (repeatable)")
    p = sub.add_parser("gradcheck", parents=[common], help="finite-difference check on random toy documents")
    p.add_argument("--n-docs", type=int, default=5)
    p = sub.add_parser("synth", parents=[common], help="generate a synthetic corpus")
    p.add_argument("--task", default="two-hop")
    p.add_argument("--n-entities", type=int, default=7)
    p.add_argument("--n-train", type=int, default=200)
    p.add_argument("--n-dev", type=int, default=50)
    p.add_argument("--n-test", type=int, default=50)
    return parser


def run(argv: Sequence[str]) -> int:
    argv = list(argv)
    try:
        args = build_parser().parse_args(argv)
        if args.threshold is not None and not 0.0 <= args.threshold <= 1.0:
            raise UsageError("--threshold must lie in [0, 1]")
        logging.basicConfig(level=logging.WARNING if args.quiet else logging.INFO, stream=sys.stderr, format="%(levelname)s %(name)s: %(message)s")
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, out, argv)
    except (TrainingError, NumericError, TapeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except INPUT_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except Exception as exc:  # noqa: BLE001 - last-resort diagnostic
        log.exception("unexpected failure")
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 2


def main() -> None:
    sys.exit(run(sys.argv[1:]))


if __name__ == "__main__":
    main()
