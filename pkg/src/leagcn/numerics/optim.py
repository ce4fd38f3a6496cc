from __future__ import annotations

from dataclasses import dataclass, field
from typing import Mapping

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adam_step(params: Mapping[str, np.ndarray], grads: Mapping[str, np.ndarray],
              state: AdamState, lr: float) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    for name, value in params.items():
        if name not in grads:
            raise KeyError(f"adam_step: missing gradient for parameter '{name}'")
        if grads[name].shape != value.shape:
            raise ValueError(f"adam_step: gradient shape {grads[name].shape} != {value.shape} for '{name}'")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for name, value in params.items():
        g = grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(value)
            state.v[name] = np.zeros_like(value)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        value -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)
