"""Adam and the warmup/step learning-rate schedule."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np


@dataclass
class AdamState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, state, lr):
    """Bias-corrected Adam update of every trainable parameter holding a gradient.

    ``params`` are :class:`Parameter` objects; their tensors carry ``.grad``.
    """
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for p in params:
        if not p.trainable:
            continue
        g = p.tensor.grad
        if g is None:
            g = np.zeros_like(p.data)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros_like(p.data)
            state.v[p.name] = np.zeros_like(p.data)
        v = state.v[p.name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * g * g
        p.tensor.data = p.data - lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


def lr_schedule(epoch, base_lr, warmup_epochs=0, decay_epochs=(), decay_factor=0.1):
    """Linear warmup from base_lr/10, then a step drop at each decay epoch."""
    if warmup_epochs > 0 and epoch < warmup_epochs:
        start = base_lr / 10.0
        return start + (base_lr - start) * epoch / warmup_epochs
    drops = sum(1 for d in decay_epochs if epoch >= d)
    return base_lr * decay_factor ** drops
