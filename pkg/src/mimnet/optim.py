"""Adam with bias correction, operating in place on :class:`ModelParams`."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import ModelParams
from .numcore import ContractError, DomainError


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    t: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: ModelParams, **hyper) -> AdamState:
        return cls(
            m={k: np.zeros_like(a) for k, a in params.arrays.items()},
            v={k: np.zeros_like(a) for k, a in params.arrays.items()},
            **hyper,
        )


def adam_step(params: ModelParams, grads: dict[str, np.ndarray], state: AdamState, lr: float) -> None:
    if lr < 0:
        raise DomainError("learning rate must be non-negative")
    if set(grads) != set(params.arrays) or set(state.m) != set(params.arrays):
        raise ContractError("params, grads and optimizer state name different arrays")
    for k, p in params.arrays.items():
        if grads[k].shape != p.shape or state.m[k].shape != p.shape:
            raise ContractError(f"shape mismatch for {k}")
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    bc1 = 1.0 - b1**state.t
    bc2 = 1.0 - b2**state.t
    for k, p in params.arrays.items():
        g = grads[k]
        m = state.m[k]
        v = state.v[k]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    params.version += 1
