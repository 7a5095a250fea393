"""AdamW with decoupled weight decay, plus the learning-rate schedules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import UsageError


@dataclass
class AdamWState:
    lr: float = 5e-4
    weight_decay: float = 0.05
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(params, state: AdamWState, lr: float | None = None) -> AdamWState:
    """One in-place update of ``params``.  ``lr`` overrides ``state.lr`` (schedules)."""
    params = list(params)
    for p in params:
        if p.grad is None:
            raise UsageError(f"parameter {p.name!r} has no gradient")
    lr = state.lr if lr is None else lr
    state.t += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p in params:
        g = p.grad.astype(np.float64)
        m = state.m.get(p.name)
        if m is None:
            m = state.m[p.name] = np.zeros(p.shape)
            state.v[p.name] = np.zeros(p.shape)
        v = state.v[p.name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        theta = p.data.astype(np.float64)
        update = (m / c1) / (np.sqrt(v / c2) + state.eps)
        new = theta - lr * state.weight_decay * theta - lr * update
        p.data = new.astype(p.dtype)
    return state


def cosine_lr(base_lr: float, step: int, total_steps: int) -> float:
    """Cosine decay from ``base_lr`` at step 0 towards 0 at ``total_steps``."""
    if total_steps <= 0:
        return base_lr
    return 0.5 * base_lr * (1.0 + math.cos(math.pi * step / total_steps))


def constant_lr(base_lr: float, step: int, total_steps: int) -> float:
    return base_lr


SCHEDULES = {"cosine": cosine_lr, "constant": constant_lr}
