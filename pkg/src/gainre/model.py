"""The aggregation-and-inference relation extraction network.

Pipeline for one document:

1. token features ``[word; type; coref]`` through a BiLSTM (or a windowed
   convolution) give contextual states ``g``;
2. mention nodes start from the mean of their tokens' states, the document
   node from the mean over all tokens; a typed-edge GCN runs over the
   mention graph and every layer's output is concatenated;
3. entities average their mentions; directed edge vectors and two-hop
   path vectors are built on the entity graph and fused with pair-queried
   attention;
4. ``[e_h; e_t; |e_h - e_t|; e_h * e_t; m_doc; p_ht]`` goes through a
   two-layer classifier with a sigmoid per relation.
"""

from __future__ import annotations

import json
from collections import OrderedDict
from dataclasses import asdict, dataclass, fields
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np

from .autodiff import Tensor, ops
from .docred import EncodedDoc
from .errors import ArgumentError, CheckpointError, ConfigError
from .graphs import EntityGraph, MentionGraph, PathSet, build_eg, build_hmg, enumerate_paths

ENCODERS = ("bilstm", "conv")
ACTIVATIONS = ("relu", "tanh")


@dataclass
class ModelConfig:
    vocab_size: int = 1
    n_entity_types: int = 1
    max_entities: int = 64
    n_relations: int = 96
    word_dim: int = 100
    type_dim: int = 20
    coref_dim: int = 20
    encoder_kind: str = "bilstm"
    encoder_hidden: int = 256
    conv_window: int = 3
    gcn_layers: int = 2
    gcn_hidden: int = 512
    edge_dim: int | None = None
    classifier_hidden: int = 512
    dropout: float = 0.6
    activation: str = "relu"
    self_loop: bool = True
    no_hmg: bool = False
    no_inference: bool = False
    no_document_node: bool = False

    def __post_init__(self) -> None:
        self.validate()

    def validate(self) -> None:
        dims = {
            "vocab_size": self.vocab_size,
            "n_entity_types": self.n_entity_types,
            "max_entities": self.max_entities,
            "n_relations": self.n_relations,
            "word_dim": self.word_dim,
            "type_dim": self.type_dim,
            "coref_dim": self.coref_dim,
            "encoder_hidden": self.encoder_hidden,
            "gcn_hidden": self.gcn_hidden,
            "classifier_hidden": self.classifier_hidden,
            "edge_dim": self.edge_size,
        }
        for k, v in dims.items():
            if not isinstance(v, int) or v <= 0:
                raise ConfigError(f"{k} must be a positive integer, got {v!r}")
        if self.gcn_layers < 1:
            raise ConfigError("gcn_layers must be at least 1")
        if self.encoder_kind not in ENCODERS:
            raise ConfigError(f"encoder_kind must be one of {ENCODERS}")
        if self.activation not in ACTIVATIONS:
            raise ConfigError(f"activation must be one of {ACTIVATIONS}")
        if self.conv_window < 1 or self.conv_window % 2 == 0:
            raise ConfigError("conv_window must be a positive odd number")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigError("dropout must lie in [0, 1)")

    # -- derived sizes -----------------------------------------------------

    @property
    def edge_size(self) -> int:
        return self.edge_dim if self.edge_dim is not None else self.gcn_hidden

    @property
    def token_dim(self) -> int:
        return self.word_dim + self.type_dim + self.coref_dim

    @property
    def state_dim(self) -> int:
        return 2 * self.encoder_hidden

    @property
    def node_dim(self) -> int:
        return self.state_dim + self.gcn_layers * self.gcn_hidden

    @property
    def doc_dim(self) -> int:
        if self.no_document_node:
            return 0
        return self.state_dim if self.no_hmg else self.node_dim

    @property
    def path_dim(self) -> int:
        return 0 if self.no_inference else 4 * self.edge_size

    @property
    def feature_dim(self) -> int:
        return 4 * self.node_dim + self.doc_dim + self.path_dim

    @property
    def edge_types(self) -> tuple[str, ...]:
        if self.no_hmg:
            kinds = ("entity",)
        elif self.no_document_node:
            kinds = ("intra", "inter")
        else:
            kinds = ("intra", "inter", "document")
        return kinds + (("self",) if self.self_loop else ())

    # -- serialisation -----------------------------------------------------

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: Mapping) -> "ModelConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ConfigError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**dict(d))

    @classmethod
    def from_file(cls, path: str | Path) -> "ModelConfig":
        return cls.from_dict(json.loads(Path(path).read_text()))


# ---------------------------------------------------------------------------
# parameters
# ---------------------------------------------------------------------------


def _glorot(rng: np.random.Generator, fan_in: int, fan_out: int) -> np.ndarray:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-bound, bound, size=(fan_in, fan_out))


def parameter_shapes(cfg: ModelConfig) -> "OrderedDict[str, tuple[int, ...]]":
    """Name and shape of every trainable tensor; a pure function of ``cfg``."""
    s: OrderedDict[str, tuple[int, ...]] = OrderedDict()
    s["emb.word"] = (cfg.vocab_size, cfg.word_dim)
    s["emb.type"] = (cfg.n_entity_types, cfg.type_dim)
    s["emb.coref"] = (cfg.max_entities + 1, cfg.coref_dim)
    H = cfg.encoder_hidden
    if cfg.encoder_kind == "bilstm":
        for d in ("fwd", "bwd"):
            s[f"enc.{d}.W_ih"] = (cfg.token_dim, 4 * H)
            s[f"enc.{d}.W_hh"] = (H, 4 * H)
            s[f"enc.{d}.b"] = (4 * H,)
    else:
        s["enc.conv.W"] = (cfg.conv_window * cfg.token_dim, 2 * H)
        s["enc.conv.b"] = (2 * H,)
    if cfg.state_dim != cfg.gcn_hidden:
        s["gcn.proj.W"] = (cfg.state_dim, cfg.gcn_hidden)
        s["gcn.proj.b"] = (cfg.gcn_hidden,)
    for layer in range(cfg.gcn_layers):
        for kind in cfg.edge_types:
            s[f"gcn.{layer}.{kind}.W"] = (cfg.gcn_hidden, cfg.gcn_hidden)
            s[f"gcn.{layer}.{kind}.b"] = (cfg.gcn_hidden,)
    if not cfg.no_inference:
        s["edge.W_q"] = (2 * cfg.node_dim, cfg.edge_size)
        s["edge.b_q"] = (cfg.edge_size,)
        s["path.W_l"] = (2 * cfg.node_dim, 4 * cfg.edge_size)
    s["cls.W_a"] = (cfg.feature_dim, cfg.classifier_hidden)
    s["cls.b_a"] = (cfg.classifier_hidden,)
    s["cls.W_b"] = (cfg.classifier_hidden, cfg.n_relations)
    s["cls.b_b"] = (cfg.n_relations,)
    return s


def init_params(
    cfg: ModelConfig, rng: np.random.Generator, word_table: np.ndarray | None = None
) -> "OrderedDict[str, Tensor]":
    params: OrderedDict[str, Tensor] = OrderedDict()
    for name, shape in parameter_shapes(cfg).items():
        if name == "emb.word" and word_table is not None:
            if word_table.shape != shape:
                raise ConfigError(f"word table {word_table.shape} does not match config {shape}")
            data = np.array(word_table, dtype=np.float64)
        elif name.startswith("emb."):
            data = rng.uniform(-0.1, 0.1, size=shape)
        elif name.startswith("enc.") and cfg.encoder_kind == "bilstm":
            bound = 1.0 / np.sqrt(cfg.encoder_hidden)
            data = rng.uniform(-bound, bound, size=shape)
        elif len(shape) == 2:
            data = _glorot(rng, *shape)
        else:
            data = np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)
    return params


def parameter_count(cfg: ModelConfig) -> int:
    return int(sum(np.prod(s) for s in parameter_shapes(cfg).values()))


# ---------------------------------------------------------------------------
# per-document constants
# ---------------------------------------------------------------------------


@dataclass
class DocGraphs:
    """Everything about one document the forward pass needs besides weights."""

    encoded: EncodedDoc
    hmg: MentionGraph
    eg: EntityGraph
    paths: PathSet
    span_pool: np.ndarray
    entity_pool: np.ndarray
    gcn_adjacency: dict[str, np.ndarray]

    @property
    def title(self) -> str:
        return self.encoded.title


def prepare(encoded: EncodedDoc, cfg: ModelConfig) -> DocGraphs:
    hmg = build_hmg(encoded, ablate_document_node=cfg.no_document_node)
    eg = build_eg(hmg)
    paths = enumerate_paths(eg)

    span_pool = np.zeros((hmg.n_mentions, encoded.n_tokens))
    for i, m in enumerate(hmg.mention_nodes):
        span_pool[i, m.start : m.end] = 1.0 / (m.end - m.start)
    entity_pool = np.zeros((encoded.n_entities, hmg.n_mentions))
    for e, members in enumerate(hmg.entity_mentions()):
        if not members:
            raise ArgumentError(f"entity {e} of {encoded.title!r} has no mentions")
        entity_pool[e, members] = 1.0 / len(members)

    if cfg.no_hmg:
        adjacency = {"entity": eg.adjacency()}
    else:
        adjacency = {k: hmg.adjacency(k) for k in cfg.edge_types if k != "self"}
    return DocGraphs(encoded, hmg, eg, paths, span_pool, entity_pool, adjacency)


@dataclass
class ForwardOutput:
    probs: Tensor
    pairs: np.ndarray
    loss: Tensor | None = None


# ---------------------------------------------------------------------------
# network
# ---------------------------------------------------------------------------


class GAIN:
    def __init__(self, config: ModelConfig, params: Mapping[str, Tensor]):
        expected = parameter_shapes(config)
        missing = sorted(set(expected) - set(params))
        extra = sorted(set(params) - set(expected))
        if missing or extra:
            raise CheckpointError(f"parameter mismatch: missing {missing}, unexpected {extra}")
        for name, shape in expected.items():
            if params[name].shape != shape:
                raise CheckpointError(f"{name}: expected shape {shape}, got {params[name].shape}")
        self.config = config
        self.params = OrderedDict((k, params[k]) for k in expected)

    @classmethod
    def initialise(cls, config: ModelConfig, rng: np.random.Generator, word_table=None) -> "GAIN":
        return cls(config, init_params(config, rng, word_table))

    def _act(self, x: Tensor) -> Tensor:
        return ops.activation(x, self.config.activation)

    def _linear(self, x: Tensor, W: str, b: str) -> Tensor:
        return ops.add_bias(ops.matmul(x, self.params[W]), self.params[b])

    # -- encoding ------------------------------------------------------------

    def encode(self, encoded: EncodedDoc, training: bool = False, rng=None) -> tuple[Tensor, Tensor]:
        """Contextual token states ``g[n, 2H]`` and the document summary ``[2H]``."""
        if encoded.n_tokens == 0:
            raise ArgumentError("cannot encode an empty document")
        cfg, p = self.config, self.params
        x = ops.concat(
            [
                ops.embedding_lookup(p["emb.word"], encoded.word_ids),
                ops.embedding_lookup(p["emb.type"], encoded.type_ids),
                ops.embedding_lookup(p["emb.coref"], encoded.coref_ids),
            ],
            axis=1,
        )
        x = ops.dropout(x, cfg.dropout, training, rng)
        if cfg.encoder_kind == "bilstm":
            fwd = ops.lstm(x, p["enc.fwd.W_ih"], p["enc.fwd.W_hh"], p["enc.fwd.b"])
            bwd = ops.lstm(x, p["enc.bwd.W_ih"], p["enc.bwd.W_hh"], p["enc.bwd.b"], reverse=True)
            g = ops.concat([fwd, bwd], axis=1)
        else:
            half = cfg.conv_window // 2
            n = encoded.n_tokens
            pad = Tensor(np.zeros((half, cfg.token_dim)))
            padded = ops.concat([pad, x, pad], axis=0) if half else x
            windows = [ops.gather_rows(padded, np.arange(n) + k) for k in range(cfg.conv_window)]
            g = self._act(self._linear(ops.concat(windows, axis=1), "enc.conv.W", "enc.conv.b"))
        return g, ops.mean(g)

    # -- mention graph -------------------------------------------------------

    def init_node_states(self, g: Tensor, doc_summary: Tensor, graphs: DocGraphs) -> Tensor:
        """Initial node matrix: span means for mentions, then the document node."""
        h0 = ops.matmul(Tensor(graphs.span_pool), g)
        if graphs.hmg.has_document_node:
            h0 = ops.concat([h0, ops.reshape(doc_summary, (1, -1))], axis=0)
        return h0

    def gcn_forward(
        self, h0: Tensor, adjacency: Mapping[str, np.ndarray], training: bool = False, rng=None
    ) -> Tensor:
        """Typed-edge graph convolution; returns ``[h0; h1; ...; hL]`` per node."""
        cfg, p = self.config, self.params
        h = self._linear(h0, "gcn.proj.W", "gcn.proj.b") if "gcn.proj.W" in p else h0
        layers = [h0]
        for layer in range(cfg.gcn_layers):
            total = None
            for kind in cfg.edge_types:
                W, b = p[f"gcn.{layer}.{kind}.W"], p[f"gcn.{layer}.{kind}.b"]
                if kind == "self":
                    term = ops.add_bias(ops.matmul(h, W), b)
                else:
                    A = adjacency[kind]
                    if not A.any():
                        continue
                    has_nbr = (A.sum(axis=1) > 0).astype(np.float64)[:, None]
                    term = ops.add(
                        ops.matmul(Tensor(A), ops.matmul(h, W)),
                        ops.matmul(Tensor(has_nbr), ops.reshape(b, (1, -1))),
                    )
                total = term if total is None else ops.add(total, term)
            if total is None:
                total = Tensor(np.zeros((h.shape[0], cfg.gcn_hidden)))
            h = ops.dropout(self._act(total), cfg.dropout, training, rng)
            layers.append(h)
        return ops.concat(layers, axis=1)

    def entity_representations(self, m: Tensor, graphs: DocGraphs) -> Tensor:
        """Mean of each entity's mention representations, ``[P, node_dim]``."""
        pool = graphs.entity_pool
        if graphs.hmg.has_document_node:
            pool = np.concatenate([pool, np.zeros((pool.shape[0], 1))], axis=1)
        return ops.matmul(Tensor(pool), m)

    def node_features(self, graphs: DocGraphs, training: bool = False, rng=None) -> tuple[Tensor, Tensor | None]:
        """Entity matrix ``E`` and the document vector (``None`` when ablated)."""
        cfg = self.config
        g, summary = self.encode(graphs.encoded, training, rng)
        if cfg.no_hmg:
            mention_h0 = ops.matmul(Tensor(graphs.span_pool), g)
            entity_h0 = ops.matmul(Tensor(graphs.entity_pool), mention_h0)
            E = self.gcn_forward(entity_h0, graphs.gcn_adjacency, training, rng)
            return E, (None if cfg.no_document_node else summary)
        h0 = self.init_node_states(g, summary, graphs)
        m = self.gcn_forward(h0, graphs.gcn_adjacency, training, rng)
        E = self.entity_representations(m, graphs)
        doc = None
        if graphs.hmg.has_document_node:
            doc = ops.reshape(ops.gather_rows(m, [graphs.hmg.document_node]), (-1,))
        return E, doc

    # -- entity graph inference: single-pair form ----------------------------

    def edge_representation(self, E: Tensor, i: int, j: int) -> Tensor:
        """Directed edge vector from entity ``i`` to entity ``j``."""
        if i == j:
            raise ArgumentError("edge representation needs two distinct entities")
        pair = ops.reshape(ops.concat([ops.gather_rows(E, [i]), ops.gather_rows(E, [j])], axis=1), (1, -1))
        return ops.reshape(self._act(self._linear(pair, "edge.W_q", "edge.b_q")), (-1,))

    def path_representation(self, E: Tensor, h: int, t: int, o: int, paths: PathSet) -> Tensor:
        if o not in paths.get((h, t), ()):
            raise ArgumentError(f"entity {o} does not bridge ({h}, {t})")
        return ops.concat(
            [
                self.edge_representation(E, h, o),
                self.edge_representation(E, o, t),
                self.edge_representation(E, t, o),
                self.edge_representation(E, o, h),
            ]
        )

    def path_attention(self, e_h: Tensor, e_t: Tensor, path_reps: Sequence[Tensor]) -> Tensor:
        """Softmax weights over the paths of one pair, queried by ``[e_h; e_t]``."""
        query = ops.reshape(ops.concat([e_h, e_t]), (1, -1))
        projected = ops.reshape(ops.matmul(query, self.params["path.W_l"]), (-1,))
        scores = ops.concat([ops.reshape(ops.sum(ops.mul(projected, p)), (1,)) for p in path_reps])
        return ops.softmax(self._act(scores))

    def fuse_paths(self, e_h: Tensor, e_t: Tensor, path_reps: Sequence[Tensor]) -> Tensor:
        """Attention-weighted sum of path vectors; zeros when there are none."""
        if not path_reps:
            return Tensor(np.zeros(4 * self.config.edge_size))
        alpha = self.path_attention(e_h, e_t, path_reps)
        stacked = ops.concat([ops.reshape(p, (1, -1)) for p in path_reps], axis=0)
        return ops.reshape(ops.matmul(ops.reshape(alpha, (1, -1)), stacked), (-1,))

    def classify_pair(self, e_h: Tensor, e_t: Tensor, m_doc: Tensor | None, p_ht: Tensor | None) -> Tensor:
        blocks = [e_h, e_t, ops.abs(ops.sub(e_h, e_t)), ops.mul(e_h, e_t)]
        if m_doc is not None:
            blocks.append(m_doc)
        if p_ht is not None:
            blocks.append(p_ht)
        features = ops.reshape(ops.concat(blocks), (1, -1))
        return ops.reshape(self._classifier(features), (-1,))

    def _classifier(self, features: Tensor) -> Tensor:
        hidden = self._act(self._linear(features, "cls.W_a", "cls.b_a"))
        return ops.sigmoid(self._linear(hidden, "cls.W_b", "cls.b_b"))

    def predict_pair(self, graphs: DocGraphs, h: int, t: int, E: Tensor, doc: Tensor | None) -> Tensor:
        """Unbatched composition of the single-pair operations."""
        e_h = ops.reshape(ops.gather_rows(E, [h]), (-1,))
        e_t = ops.reshape(ops.gather_rows(E, [t]), (-1,))
        p_ht = None
        if not self.config.no_inference:
            reps = [self.path_representation(E, h, t, o, graphs.paths) for o in graphs.paths[(h, t)]]
            p_ht = self.fuse_paths(e_h, e_t, reps)
        return self.classify_pair(e_h, e_t, doc, p_ht)

    # -- batched form --------------------------------------------------------

    def _path_block(self, E: Tensor, pairs: np.ndarray, paths: PathSet) -> Tensor:
        n = len(pairs)
        de = self.config.edge_size
        triples = [(k, int(h), o, int(t)) for k, (h, t) in enumerate(pairs) for o in paths[(int(h), int(t))]]
        if not triples:
            return Tensor(np.zeros((n, 4 * de)))
        directed = sorted({d for _, h, o, t in triples for d in ((h, o), (o, t), (t, o), (o, h))})
        where = {d: i for i, d in enumerate(directed)}
        src = np.asarray([d[0] for d in directed])
        dst = np.asarray([d[1] for d in directed])
        edge_in = ops.concat([ops.gather_rows(E, src), ops.gather_rows(E, dst)], axis=1)
        edges = self._act(self._linear(edge_in, "edge.W_q", "edge.b_q"))

        def rows(a, b):
            return ops.gather_rows(edges, [where[(x[a], x[b])] for x in triples])

        # triple layout: (k, h, o, t) -> positions 1, 2, 3
        path_reps = ops.concat([rows(1, 2), rows(2, 3), rows(3, 2), rows(2, 1)], axis=1)
        heads = np.asarray([x[1] for x in triples])
        tails = np.asarray([x[3] for x in triples])
        query = ops.concat([ops.gather_rows(E, heads), ops.gather_rows(E, tails)], axis=1)
        scores = self._act(ops.sum(ops.mul(ops.matmul(query, self.params["path.W_l"]), path_reps), axis=1))
        segment = np.asarray([x[0] for x in triples])
        alpha = ops.segment_softmax(scores, segment, n)
        owner = np.zeros((n, len(triples)))
        owner[segment, np.arange(len(triples))] = 1.0
        return ops.matmul(Tensor(owner), ops.scale_rows(path_reps, alpha))

    def forward(
        self,
        graphs: DocGraphs,
        pair_idx: np.ndarray | None = None,
        training: bool = False,
        rng=None,
        with_loss: bool = False,
    ) -> ForwardOutput:
        """Relation probabilities for the selected candidate pairs of one document."""
        enc = graphs.encoded
        if pair_idx is None:
            pair_idx = np.arange(len(enc.pairs))
        pair_idx = np.asarray(pair_idx, dtype=np.int64)
        if pair_idx.size == 0:
            raise ArgumentError(f"document {enc.title!r} has no candidate pairs")
        pairs = enc.pairs[pair_idx]
        E, doc = self.node_features(graphs, training, rng)
        e_h = ops.gather_rows(E, pairs[:, 0])
        e_t = ops.gather_rows(E, pairs[:, 1])
        blocks = [e_h, e_t, ops.abs(ops.sub(e_h, e_t)), ops.mul(e_h, e_t)]
        if doc is not None:
            blocks.append(ops.gather_rows(ops.reshape(doc, (1, -1)), np.zeros(len(pairs), dtype=np.int64)))
        if not self.config.no_inference:
            blocks.append(self._path_block(E, pairs, graphs.paths))
        probs = self._classifier(ops.concat(blocks, axis=1))
        out = ForwardOutput(probs, pairs)
        if with_loss:
            out.loss = ops.bce_loss(probs, Tensor(enc.targets[pair_idx]))
        return out

    # -- persistence helpers -------------------------------------------------

    def state_dict(self) -> dict[str, np.ndarray]:
        return {k: t.data.copy() for k, t in self.params.items()}

    def load_state(self, state: Mapping[str, np.ndarray]) -> None:
        missing = sorted(set(self.params) - set(state))
        extra = sorted(set(state) - set(self.params))
        if missing or extra:
            raise CheckpointError(f"checkpoint does not fit model: missing {missing}, unexpected {extra}")
        for k, t in self.params.items():
            if state[k].shape != t.shape:
                raise CheckpointError(f"{k}: checkpoint shape {state[k].shape}, model {t.shape}")
            t.data[...] = state[k]
