"""Minimal dense-tensor core with reverse-mode differentiation and AdamW."""

import numpy as np

from . import ops
from .checkpoint import load_checkpoint, save_checkpoint
from .gradcheck import GradcheckReport, check_gradients, numeric_gradient, relative_error
from .optim import AdamW, OptimizerState, adamw_step
from .tensor import Tape, Tensor, active_tape, as_tensor


def make_rng(seed: int) -> np.random.Generator:
    """Counter-based generator (Philox) used for every stochastic op."""
    return np.random.Generator(np.random.Philox(seed))


__all__ = [
    "AdamW",
    "GradcheckReport",
    "OptimizerState",
    "Tape",
    "Tensor",
    "active_tape",
    "adamw_step",
    "as_tensor",
    "check_gradients",
    "load_checkpoint",
    "make_rng",
    "numeric_gradient",
    "ops",
    "relative_error",
    "save_checkpoint",
]
