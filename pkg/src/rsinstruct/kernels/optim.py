from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Mapping

import numpy as np

from .store import ParameterStore


@dataclass(frozen=True)
class AdamWHyper:
    lr: float = 2e-5
    beta1: float = 0.9
    beta2: float = 0.95
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamWState:
    step: int = 0
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)


def adamw_step(store: ParameterStore, grads: Mapping[str, np.ndarray], hyper: AdamWHyper,
               state: AdamWState, lr: float | None = None) -> ParameterStore:
    """One decoupled-weight-decay Adam update, in place, on trainable parameters only.

    Passing a gradient for a frozen parameter is an error; trainable parameters
    without a gradient are treated as having a zero gradient.
    """
    for name in grads:
        if not store.get(name).trainable:
            raise ValueError(f"gradient supplied for frozen parameter {name!r}")
    lr = hyper.lr if lr is None else lr
    state.step += 1
    t = state.step
    c1 = 1.0 - hyper.beta1 ** t
    c2 = 1.0 - hyper.beta2 ** t
    for p in store:
        if not p.trainable:
            continue
        g = np.asarray(grads.get(p.name, np.zeros_like(p.value)), dtype=np.float64)
        if g.shape != p.value.shape:
            raise ValueError(f"gradient shape {g.shape} != parameter {p.name} shape {p.value.shape}")
        m = state.m.setdefault(p.name, np.zeros_like(p.value))
        v = state.v.setdefault(p.name, np.zeros_like(p.value))
        m *= hyper.beta1
        m += (1.0 - hyper.beta1) * g
        v *= hyper.beta2
        v += (1.0 - hyper.beta2) * g * g
        if hyper.weight_decay:
            p.value *= 1.0 - lr * hyper.weight_decay
        p.value -= lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return store


def cosine_lr(step: int, total_steps: int, max_lr: float = 2e-5, min_lr: float = 0.0,
              warmup_steps: int = 0) -> float:
    """Linear warmup then cosine decay from ``max_lr`` to ``min_lr``."""
    if warmup_steps and step < warmup_steps:
        return max_lr * (step + 1) / warmup_steps
    span = max(1, total_steps - warmup_steps)
    progress = min(1.0, (step - warmup_steps) / span)
    return min_lr + 0.5 * (max_lr - min_lr) * (1.0 + math.cos(math.pi * progress))
