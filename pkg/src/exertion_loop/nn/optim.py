"""Adam with element-wise gradient clipping."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NumericError
from .layers import Parameter


@dataclass
class AdamState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step_count: int = 0
    first_moment: list[np.ndarray] = field(default_factory=list)
    second_moment: list[np.ndarray] = field(default_factory=list)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState,
              clip: tuple[float, float] | None = (-100.0, 100.0),
              names: list[str] | None = None) -> None:
    """Apply one bias-corrected Adam update to ``params`` in place.

    Gradients are clamped to ``clip`` before they enter the moment estimates.
    All gradients are checked before any parameter is touched, so a bad
    gradient leaves the model and the optimizer state unchanged.
    """
    for i, g in enumerate(grads):
        if not np.all(np.isfinite(g)):
            label = names[i] if names else f"#{i}"
            raise NumericError(f"non-finite gradient for parameter {label}")
    if not state.first_moment:
        state.first_moment = [np.zeros(p.shape, dtype=np.float64) for p in params]
        state.second_moment = [np.zeros(p.shape, dtype=np.float64) for p in params]
    state.step_count += 1
    t = state.step_count
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1**t
    c2 = 1.0 - b2**t
    for p, g, m, v in zip(params, grads, state.first_moment, state.second_moment):
        g = g.astype(np.float64)
        if clip is not None:
            g = np.clip(g, clip[0], clip[1])
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        update = state.lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
        p -= update.astype(p.dtype)


class Adam:
    """Optimizer bound to a list of named parameters."""

    def __init__(self, named_params: list[tuple[str, Parameter]], lr: float = 1e-3,
                 clip: tuple[float, float] | None = (-100.0, 100.0),
                 betas: tuple[float, float] = (0.9, 0.999), eps: float = 1e-8):
        self.names = [n for n, _ in named_params]
        self.params = [p for _, p in named_params]
        self.clip = clip
        self.state = AdamState(lr=lr, beta1=betas[0], beta2=betas[1], eps=eps)

    def zero_grad(self):
        for p in self.params:
            p.grad[...] = 0

    def step(self):
        adam_step([p.value for p in self.params], [p.grad for p in self.params],
                  self.state, self.clip, self.names)
