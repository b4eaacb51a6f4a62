"""Central finite-difference gradient checking."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Mapping

import numpy as np

from .tensor import Tape, Tensor

# Entries whose analytic and numeric gradients are both below this are
# compared in absolute terms: at h=1e-5 float64 differencing noise is
# ~1e-11, which would swamp a purely relative test on ~1e-7 gradients.
DEFAULT_FLOOR = 1e-6


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = DEFAULT_FLOOR) -> np.ndarray:
    denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / denom


def numeric_gradient(f: Callable[[], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """d f / d x by central differences, perturbing ``x`` in place."""
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        up = f()
        flat[i] = orig - h
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * h)
    return grad


@dataclass
class GradcheckReport:
    errors: dict[str, float]
    h: float

    @property
    def max_error(self) -> float:
        return max(self.errors.values(), default=0.0)

    @property
    def worst(self) -> str | None:
        return max(self.errors, key=self.errors.get) if self.errors else None

    def passed(self, tol: float = 1e-4) -> bool:
        return self.max_error < tol


def check_gradients(
    loss_fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    floor: float = DEFAULT_FLOOR,
) -> GradcheckReport:
    """Compare tape gradients of ``loss_fn()`` against finite differences.

    ``loss_fn`` must rebuild the forward pass on each call and be
    deterministic (no dropout sampling that changes between calls).
    """
    for p in params.values():
        p.grad = None
    with Tape() as tape:
        loss = loss_fn()
    tape.backward(loss)
    analytic = {k: (p.grad if p.grad is not None else np.zeros_like(p.data)).copy() for k, p in params.items()}

    def value() -> float:
        return loss_fn().item()

    errors = {}
    for name, p in params.items():
        numeric = numeric_gradient(value, p.data, h)
        errors[name] = float(relative_error(analytic[name], numeric, floor).max(initial=0.0))
    return GradcheckReport(errors, h)
