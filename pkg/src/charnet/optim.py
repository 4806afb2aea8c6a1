"""Adam optimizer and cosine learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass
import math

import numpy as np

from .autodiff import Tensor
from .errors import InputError

__all__ = ["AdamState", "adam_step", "cosine_lr"]


@dataclass
class AdamState:
    """First/second moment accumulators plus the shared step counter."""

    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0

    @classmethod
    def initial(cls, params: list[Tensor]) -> "AdamState":
        return cls(
            m=[np.zeros_like(p.data) for p in params],
            v=[np.zeros_like(p.data) for p in params],
        )


def adam_step(
    params: list[Tensor],
    state: AdamState,
    lr: float,
    beta1: float = 0.9,
    beta2: float = 0.999,
    eps: float = 1e-8,
    weight_decay: float = 0.0,
) -> None:
    """One in-place Adam update with bias correction.

    Weight decay is classic L2: `wd * w` is added to the gradient before
    the moment updates (not the decoupled variant). Parameters with no
    accumulated gradient are skipped but keep their state slots aligned.
    """
    if len(state.m) != len(params) or len(state.v) != len(params):
        raise InputError(
            f"adam_step: state holds {len(state.m)} slots for {len(params)} params"
        )
    state.step += 1
    t = state.step
    correct1 = 1.0 - beta1**t
    correct2 = 1.0 - beta2**t
    for p, m, v in zip(params, state.m, state.v):
        if p.grad is None:
            continue
        g = p.grad
        if weight_decay != 0.0:
            g = g + weight_decay * p.data
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * (g * g)
        mhat = m / correct1
        vhat = v / correct2
        p.data -= lr * mhat / (np.sqrt(vhat) + eps)


def cosine_lr(epoch: int, total_epochs: int, base_lr: float) -> float:
    """Cosine decay from `base_lr` at epoch 0 toward 0 at `total_epochs`."""
    if total_epochs <= 0:
        raise InputError(f"cosine_lr: total_epochs must be positive, got {total_epochs}")
    if not 0 <= epoch <= total_epochs:
        raise InputError(f"cosine_lr: epoch {epoch} outside [0, {total_epochs}]")
    return base_lr * 0.5 * (1.0 + math.cos(math.pi * epoch / total_epochs))
