from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from ..errors import DimensionError
from .tensor import Tensor


@dataclass
class OptimizerState:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    betas: tuple[float, float] = (0.9, 0.999)
    eps: float = 1e-8
    step: int = 0
    exp_avg: dict[str, np.ndarray] = field(default_factory=dict)
    exp_avg_sq: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(
    params: Mapping[str, np.ndarray],
    grads: Mapping[str, np.ndarray | None],
    state: OptimizerState,
) -> None:
    """One AdamW update, in place on ``params`` and ``state``.

    Weight decay is decoupled: parameters shrink by ``lr * weight_decay``
    before the bias-corrected Adam step, and the decay never enters the
    moment estimates. A missing gradient counts as zero.
    """
    state.step += 1
    beta1, beta2 = state.betas
    bc1 = 1.0 - beta1**state.step
    bc2 = 1.0 - beta2**state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            g = np.zeros_like(p)
        elif g.shape != p.shape:
            raise DimensionError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.exp_avg.setdefault(name, np.zeros_like(p))
        v = state.exp_avg_sq.setdefault(name, np.zeros_like(p))
        if m.shape != p.shape:
            raise DimensionError(f"optimizer moments for {name} do not match the parameter shape")
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        if state.weight_decay:
            p *= 1.0 - state.lr * state.weight_decay
        p -= state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)


class AdamW:
    """Thin stateful wrapper around :func:`adamw_step` for named tensors."""

    def __init__(
        self,
        params: Mapping[str, Tensor],
        lr: float = 1e-3,
        weight_decay: float = 1e-4,
        betas: tuple[float, float] = (0.9, 0.999),
        eps: float = 1e-8,
    ):
        self.params = dict(params)
        self.state = OptimizerState(lr=lr, weight_decay=weight_decay, betas=betas, eps=eps)

    def step(self) -> None:
        adamw_step(
            {k: t.data for k, t in self.params.items()},
            {k: t.grad for k, t in self.params.items()},
            self.state,
        )

    def zero_grad(self) -> None:
        for t in self.params.values():
            t.grad = None
