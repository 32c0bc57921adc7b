"""Adam optimizer operating on parameter tensors in place."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .engine import Tensor


@dataclass
class AdamState:
    """First/second moment accumulators plus hyperparameters.

    Moments are keyed by position in the parameter list, which must stay
    stable across steps.
    """

    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)

    def __post_init__(self):
        if not 0.0 <= self.beta1 < 1.0 or not 0.0 <= self.beta2 < 1.0:
            raise ValueError(f"betas must lie in [0, 1), got "
                             f"{self.beta1}, {self.beta2}")
        if self.learning_rate <= 0 or self.eps <= 0:
            raise ValueError("learning_rate and eps must be positive")
        if self.step < 0:
            raise ValueError(f"step must be >= 0, got {self.step}")


def adam_step(params: Sequence[Tensor], state: AdamState) -> None:
    """One bias-corrected Adam update; mutates params and state in place."""
    if not state.m:
        state.m = [np.zeros(p.shape) for p in params]
        state.v = [np.zeros(p.shape) for p in params]
    if len(state.m) != len(params):
        raise ValueError(
            f"optimizer state tracks {len(state.m)} parameters, got {len(params)}")
    for p in params:
        if p.grad is None:
            raise ValueError(f"parameter {p.name or p} has no gradient")
        if p.grad.shape != p.shape:
            raise ValueError(
                f"gradient shape {p.grad.shape} != parameter shape {p.shape}")
    state.step += 1
    bias1 = 1.0 - state.beta1 ** state.step
    bias2 = 1.0 - state.beta2 ** state.step
    for p, m, v in zip(params, state.m, state.v):
        m *= state.beta1
        m += (1.0 - state.beta1) * p.grad
        v *= state.beta2
        v += (1.0 - state.beta2) * p.grad ** 2
        p.data -= state.learning_rate * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
