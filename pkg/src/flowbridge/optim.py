"""AdamW with decoupled weight decay, plus the learning-rate schedule."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError


@dataclass
class AdamState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def adamw_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray], lr: float,
               weight_decay: float, state: AdamState) -> AdamState:
    """Apply one AdamW update to ``params`` in place and return ``state``.

    Parameters are visited in sorted-name order so the arithmetic is
    identical from run to run. ``lr`` may be zero (parameters then stay
    bitwise unchanged); negative rates are rejected.
    """
    if lr < 0:
        raise ContractError(f"learning rate must be non-negative, got {lr}")
    missing = set(params) - set(grads)
    if missing:
        raise ContractError(f"no gradient for parameters: {sorted(missing)}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    bias1 = 1.0 - b1 ** state.step
    bias2 = 1.0 - b2 ** state.step
    for name in sorted(params):
        p, g = params[name], grads[name]
        if p.shape != g.shape:
            raise ContractError(f"{name}: parameter shape {p.shape} != gradient shape {g.shape}")
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        if lr == 0.0:
            continue
        if weight_decay:
            p *= 1.0 - lr * weight_decay
        p -= (lr / bias1) * m / (np.sqrt(v / bias2) + state.eps)
    return state


def cosine_lr(base_lr: float, step: int, total_steps: int, warmup_steps: int = 0,
              min_ratio: float = 0.0) -> float:
    """Linear warmup followed by cosine decay to ``base_lr * min_ratio``."""
    if warmup_steps and step < warmup_steps:
        return base_lr * (step + 1) / warmup_steps
    if total_steps <= warmup_steps:
        return base_lr
    progress = min(1.0, (step - warmup_steps) / (total_steps - warmup_steps))
    return base_lr * (min_ratio + (1.0 - min_ratio) * 0.5 * (1.0 + math.cos(math.pi * progress)))
