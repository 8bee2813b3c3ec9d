"""Adam with bias correction."""

from dataclasses import dataclass

import numpy as np

__all__ = ["AdamState", "adam_init", "adam_step"]


@dataclass
class AdamState:
    m: dict
    v: dict
    step: int = 0
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adam_init(params, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8):
    zeros = {k: np.zeros_like(v) for k, v in params.items()}
    return AdamState({k: z.copy() for k, z in zeros.items()}, zeros, 0, lr, beta1, beta2, eps)


def adam_step(params, grads, state):
    """One Adam update; returns new ``(params, state)`` and leaves the inputs untouched."""
    if params.keys() != grads.keys() or params.keys() != state.m.keys():
        raise ValueError("params, grads and optimizer state must share the same names")
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    new_params, new_m, new_v = {}, {}, {}
    for name, p in params.items():
        g = grads[name]
        if g.shape != p.shape:
            raise ValueError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = b1 * state.m[name] + (1 - b1) * g
        v = b2 * state.v[name] + (1 - b2) * g * g
        update = state.lr * (m / corr1) / (np.sqrt(v / corr2) + state.eps)
        new_params[name] = (p - update).astype(p.dtype, copy=False)
        new_m[name] = m.astype(p.dtype, copy=False)
        new_v[name] = v.astype(p.dtype, copy=False)
    return new_params, AdamState(new_m, new_v, t, state.lr, b1, b2, state.eps)
