"""Differentiable primitives.

Every op takes and returns :class:`Tensor`. Binary elementwise ops demand
equal shapes; the only broadcasting helpers are :func:`add_bias` and
:func:`scale_rows`, which the model needs for biases and attention weights.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from ..errors import ArgumentError, DimensionError, NumericError
from .tensor import Tensor, active_tape, as_tensor

BCE_EPS = 1e-12


def _result(data: np.ndarray, inputs: tuple[Tensor, ...], backward, op: str) -> Tensor:
    out = Tensor(data)
    tape = active_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward, op)
    return out


def _same_shape(a: Tensor, b: Tensor, op: str) -> None:
    if a.shape != b.shape:
        raise DimensionError(f"{op}: shape mismatch {a.shape} vs {b.shape}")


# ---------------------------------------------------------------------------
# linear algebra
# ---------------------------------------------------------------------------


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: cannot multiply {a.shape} by {b.shape}")
    A, B = a.data, b.data

    def backward(g):
        return g @ B.T, A.T @ g

    return _result(A @ B, (a, b), backward, "matmul")


def transpose(x: Tensor) -> Tensor:
    if x.ndim != 2:
        raise DimensionError(f"transpose expects a matrix, got {x.shape}")
    return _result(x.data.T.copy(), (x,), lambda g: (g.T,), "transpose")


def reshape(x: Tensor, shape: Sequence[int]) -> Tensor:
    shape = tuple(shape)
    orig = x.shape
    try:
        data = x.data.reshape(shape)
    except ValueError as exc:
        raise DimensionError(f"reshape: cannot view {orig} as {shape}") from exc
    return _result(data.copy(), (x,), lambda g: (g.reshape(orig),), "reshape")


# ---------------------------------------------------------------------------
# elementwise
# ---------------------------------------------------------------------------


def add(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "add")
    return _result(a.data + b.data, (a, b), lambda g: (g, g), "add")


def sub(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "sub")
    return _result(a.data - b.data, (a, b), lambda g: (g, -g), "sub")


def mul(a: Tensor, b: Tensor) -> Tensor:
    a, b = as_tensor(a), as_tensor(b)
    _same_shape(a, b, "mul")
    A, B = a.data, b.data
    return _result(A * B, (a, b), lambda g: (g * B, g * A), "mul")


def scale(x: Tensor, c: float) -> Tensor:
    return _result(x.data * c, (x,), lambda g: (g * c,), "scale")


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """``x[..., d] + b[d]`` with the bias broadcast over leading rows."""
    if b.ndim != 1 or x.shape[-1] != b.shape[0]:
        raise DimensionError(f"add_bias: bias {b.shape} does not fit {x.shape}")

    def backward(g):
        return g, g.reshape(-1, b.shape[0]).sum(axis=0)

    return _result(x.data + b.data, (x, b), backward, "add_bias")


def scale_rows(x: Tensor, w: Tensor) -> Tensor:
    """Multiply row ``i`` of ``x[n, d]`` by the scalar ``w[i]``."""
    if x.ndim != 2 or w.ndim != 1 or x.shape[0] != w.shape[0]:
        raise DimensionError(f"scale_rows: weights {w.shape} do not fit {x.shape}")
    X, W = x.data, w.data

    def backward(g):
        return g * W[:, None], (g * X).sum(axis=1)

    return _result(X * W[:, None], (x, w), backward, "scale_rows")


def relu(x: Tensor) -> Tensor:
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0.0), (x,), lambda g: (g * mask,), "relu")


def tanh(x: Tensor) -> Tensor:
    y = np.tanh(x.data)
    return _result(y, (x,), lambda g: (g * (1.0 - y * y),), "tanh")


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def sigmoid(x: Tensor) -> Tensor:
    y = _sigmoid(x.data)
    return _result(y, (x,), lambda g: (g * y * (1.0 - y),), "sigmoid")


def abs(x: Tensor) -> Tensor:  # noqa: A001 - mirrors numpy naming
    sign = np.sign(x.data)
    return _result(np.abs(x.data), (x,), lambda g: (g * sign,), "abs")


def activation(x: Tensor, kind: str) -> Tensor:
    if kind == "relu":
        return relu(x)
    if kind == "tanh":
        return tanh(x)
    raise ArgumentError(f"unknown activation {kind!r}")


ELEMENTWISE = {
    "add": add,
    "sub": sub,
    "mul": mul,
    "abs": abs,
    "relu": relu,
    "tanh": tanh,
    "sigmoid": sigmoid,
}


def elementwise(kind: str, a: Tensor, b: Tensor | None = None) -> Tensor:
    try:
        fn = ELEMENTWISE[kind]
    except KeyError:
        raise ArgumentError(f"unknown elementwise op {kind!r}") from None
    if kind in ("add", "sub", "mul"):
        if b is None:
            raise ArgumentError(f"{kind} needs two operands")
        return fn(a, b)
    return fn(a)


# ---------------------------------------------------------------------------
# structural
# ---------------------------------------------------------------------------


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [as_tensor(t) for t in tensors]
    if not tensors:
        raise ArgumentError("concat of an empty list")
    try:
        data = np.concatenate([t.data for t in tensors], axis=axis)
    except ValueError as exc:
        shapes = [t.shape for t in tensors]
        raise DimensionError(f"concat along axis {axis}: incompatible shapes {shapes}") from exc
    bounds = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def backward(g):
        return np.split(g, bounds, axis=axis)

    return _result(data, tuple(tensors), backward, "concat")


def sum(x: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    shape = x.shape

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, shape).copy(),)
        return (np.broadcast_to(np.expand_dims(g, axis), shape).copy(),)

    return _result(np.asarray(x.data.sum(axis=axis)), (x,), backward, "sum")


def mean(rows: Tensor) -> Tensor:
    """Average over the first axis: ``[n, d] -> [d]``."""
    n = rows.shape[0] if rows.ndim else 0
    if n == 0:
        raise ArgumentError("mean over zero rows")
    shape = rows.shape

    def backward(g):
        return (np.broadcast_to(g / n, shape).copy(),)

    return _result(rows.data.mean(axis=0), (rows,), backward, "mean")


def embedding_lookup(table: Tensor, ids: Sequence[int] | np.ndarray) -> Tensor:
    """Gather rows of ``table``; repeated ids scatter-add in backward."""
    ids = np.asarray(ids, dtype=np.int64).reshape(-1)
    if table.ndim != 2:
        raise DimensionError(f"embedding table must be a matrix, got {table.shape}")
    V = table.shape[0]
    if ids.size and (ids.min() < 0 or ids.max() >= V):
        bad = ids[(ids < 0) | (ids >= V)][0]
        raise IndexError(f"embedding id {int(bad)} out of range for table with {V} rows")

    def backward(g):
        out = np.zeros_like(table.data)
        np.add.at(out, ids, g)
        return (out,)

    return _result(table.data[ids], (table,), backward, "embedding_lookup")


gather_rows = embedding_lookup


# ---------------------------------------------------------------------------
# normalisation, regularisation, loss
# ---------------------------------------------------------------------------


def segment_softmax(logits: Tensor, segments: Sequence[int] | np.ndarray, n_segments: int) -> Tensor:
    """Softmax taken independently within each segment of a flat vector."""
    if logits.ndim != 1:
        raise DimensionError(f"segment_softmax expects a vector, got {logits.shape}")
    seg = np.asarray(segments, dtype=np.int64)
    if seg.shape != logits.shape:
        raise DimensionError("segment ids must align with logits")
    z = logits.data
    if np.isnan(z).any():
        raise NumericError("softmax received NaN input")
    peak = np.full(n_segments, -np.inf)
    np.maximum.at(peak, seg, z)
    e = np.exp(z - peak[seg])
    denom = np.zeros(n_segments)
    np.add.at(denom, seg, e)
    y = e / denom[seg]

    def backward(g):
        dot = np.zeros(n_segments)
        np.add.at(dot, seg, g * y)
        return (y * (g - dot[seg]),)

    return _result(y, (logits,), backward, "softmax")


def softmax(logits: Tensor) -> Tensor:
    if logits.ndim != 1 or logits.shape[0] == 0:
        raise ArgumentError(f"softmax expects a non-empty vector, got {logits.shape}")
    return segment_softmax(logits, np.zeros(logits.shape[0], dtype=np.int64), 1)


def dropout(x: Tensor, rate: float, training: bool, rng: np.random.Generator | None) -> Tensor:
    if not 0.0 <= rate < 1.0:
        raise ArgumentError(f"dropout rate must lie in [0, 1), got {rate}")
    if not training or rate == 0.0:
        return x
    if rng is None:
        raise ArgumentError("dropout in training mode needs an rng")
    keep = (rng.random(x.shape) >= rate) / (1.0 - rate)
    return _result(x.data * keep, (x,), lambda g: (g * keep,), "dropout")


def bce_loss(probs: Tensor, targets: Tensor, mask: Tensor | None = None) -> Tensor:
    """Mean binary cross entropy over the masked-in entries.

    Probabilities are clamped to ``[1e-12, 1 - 1e-12]``; clamped entries
    pass no gradient.
    """
    targets, mask = as_tensor(targets), as_tensor(mask if mask is not None else np.ones(probs.shape))
    _same_shape(probs, targets, "bce_loss")
    _same_shape(probs, mask, "bce_loss")
    P = probs.data
    inside = (P > BCE_EPS) & (P < 1.0 - BCE_EPS)
    p = np.clip(P, BCE_EPS, 1.0 - BCE_EPS)
    t, m = targets.data, mask.data
    count = m.sum()
    if count == 0:
        raise ArgumentError("bce_loss with an all-zero mask")
    loss = -(m * (t * np.log(p) + (1.0 - t) * np.log1p(-p))).sum() / count

    def backward(g):
        dp = -(m * (t / p - (1.0 - t) / (1.0 - p))) / count * inside
        return g * dp, None, None

    return _result(np.asarray(loss), (probs, targets, mask), backward, "bce_loss")


# ---------------------------------------------------------------------------
# recurrent
# ---------------------------------------------------------------------------


def lstm(x: Tensor, w_ih: Tensor, w_hh: Tensor, b: Tensor, reverse: bool = False) -> Tensor:
    """Single-layer LSTM over the rows of ``x[n, d_in]``, returning ``[n, H]``.

    Gate blocks are laid out ``[input, forget, cell, output]`` along the
    ``4H`` axis of ``w_ih[d_in, 4H]``, ``w_hh[H, 4H]`` and ``b[4H]``. The
    whole recurrence is one tape node; backward runs BPTT in numpy.
    """
    n, d_in = x.shape
    H = w_hh.shape[0]
    if w_ih.shape != (d_in, 4 * H) or w_hh.shape != (H, 4 * H) or b.shape != (4 * H,):
        raise DimensionError(
            f"lstm: weights {w_ih.shape}, {w_hh.shape}, {b.shape} do not fit input {x.shape} with H={H}"
        )
    order = np.arange(n)[::-1] if reverse else np.arange(n)
    X = x.data[order]
    Wih, Whh = w_ih.data, w_hh.data
    zx = X @ Wih + b.data

    hs = np.zeros((n + 1, H))
    cs = np.zeros((n + 1, H))
    gates = np.zeros((n, 4 * H))
    for step in range(n):
        z = zx[step] + hs[step] @ Whh
        i = _sigmoid(z[:H])
        f = _sigmoid(z[H : 2 * H])
        gg = np.tanh(z[2 * H : 3 * H])
        o = _sigmoid(z[3 * H :])
        cs[step + 1] = f * cs[step] + i * gg
        hs[step + 1] = o * np.tanh(cs[step + 1])
        gates[step] = np.concatenate([i, f, gg, o])

    out = np.empty((n, H))
    out[order] = hs[1:]

    def backward(g):
        G = g[order]
        dz = np.zeros((n, 4 * H))
        dh_next = np.zeros(H)
        dc_next = np.zeros(H)
        for step in range(n - 1, -1, -1):
            i, f, gg, o = np.split(gates[step], 4)
            tc = np.tanh(cs[step + 1])
            dh = G[step] + dh_next
            dc = dh * o * (1.0 - tc * tc) + dc_next
            dz[step] = np.concatenate(
                [
                    dc * gg * i * (1.0 - i),
                    dc * cs[step] * f * (1.0 - f),
                    dc * i * (1.0 - gg * gg),
                    dh * tc * o * (1.0 - o),
                ]
            )
            dh_next = dz[step] @ Whh.T
            dc_next = dc * f
        dX = np.empty_like(x.data)
        dX[order] = dz @ Wih.T
        return dX, X.T @ dz, hs[:-1].T @ dz, dz.sum(axis=0)

    return _result(out, (x, w_ih, w_hh, b), backward, "lstm")
