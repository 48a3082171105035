"""Adam with bias correction, gradient clipping and the warmup schedule."""

import math
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError


@dataclass
class OptimizerState:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.98
    eps: float = 1e-8
    step: int = 0
    m: dict = field(default_factory=dict)
    v: dict = field(default_factory=dict)


def adam_step(params, grads, state):
    """Update ``params`` (name -> array) in place from ``grads`` (name -> array or None)."""
    state.step += 1
    c1 = 1.0 - state.beta1 ** state.step
    c2 = 1.0 - state.beta2 ** state.step
    for name, p in params.items():
        g = grads.get(name)
        if g is None:
            continue
        if g.shape != p.shape:
            raise ShapeError(f"gradient for {name} has shape {g.shape}, parameter {p.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        mhat = m / c1
        vhat = v / c2
        p -= (state.lr * mhat / (np.sqrt(vhat) + state.eps)).astype(p.dtype)
    return params, state


def global_norm(grads):
    total = 0.0
    for g in grads:
        if g is not None:
            total += float(np.dot(g.ravel().astype(np.float64), g.ravel().astype(np.float64)))
    return math.sqrt(total)


def clip_grad_norm(grads, max_norm):
    """Scale gradients in place so their global norm is at most ``max_norm``; returns the pre-clip norm."""
    grads = list(grads)
    norm = global_norm(grads)
    if norm > max_norm:
        scale = max_norm / (norm + 1e-6)
        for g in grads:
            if g is not None:
                g *= g.dtype.type(scale)
    return norm


def inverse_sqrt_lr(step, base_lr, warmup):
    """Linear warmup to ``base_lr`` then decay as 1/sqrt(step)."""
    step = max(step, 1)
    if step < warmup:
        return base_lr * step / warmup
    return base_lr * math.sqrt(warmup / step)
