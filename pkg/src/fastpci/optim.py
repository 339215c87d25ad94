"""Adam with decoupled weight decay and the step-halving learning-rate schedule."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .errors import NumericError, ShapeError


@dataclass
class AdamHyper:
    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.0


@dataclass
class AdamState:
    step: int = 0
    m: list = field(default_factory=list)
    v: list = field(default_factory=list)


def adam_step(params, grads, state, hyper):
    """One in-place Adam update of ``params`` (list of arrays); returns ``state``.

    Weight decay is decoupled: ``p -= lr * wd * p`` before the moment step.
    A ``None`` gradient is treated as zero.
    """
    if not state.m:
        state.m = [np.zeros_like(p) for p in params]
        state.v = [np.zeros_like(p) for p in params]
    if len(state.m) != len(params):
        raise ShapeError(f"optimizer state holds {len(state.m)} tensors, got {len(params)} params")
    state.step += 1
    b1, b2 = hyper.beta1, hyper.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if m.shape != p.shape:
            raise ShapeError(f"optimizer state {m.shape} does not match param {p.shape}")
        if g is None:
            g = np.zeros_like(p)
        if ad._strict() and not np.all(np.isfinite(g)):
            raise NumericError("adam_step: non-finite gradient")
        if hyper.weight_decay:
            p -= (hyper.lr * hyper.weight_decay) * p
        m *= b1
        m += (1 - b1) * g
        v *= b2
        v += (1 - b2) * np.square(g)
        p -= hyper.lr * (m / c1) / (np.sqrt(v / c2) + hyper.eps)
    return state


class Adam:
    def __init__(self, params, lr=1e-3, weight_decay=0.0, betas=(0.9, 0.999), eps=1e-8):
        self.params = list(params)
        self.hyper = AdamHyper(lr, betas[0], betas[1], eps, weight_decay)
        self.state = AdamState()

    def step(self):
        adam_step([p.data for p in self.params], [p.grad for p in self.params], self.state, self.hyper)

    def zero_grad(self):
        for p in self.params:
            p.grad = None


def lr_at(epoch, lr0, period):
    """``lr0 * 0.5 ** floor(epoch / period)``."""
    return lr0 * 0.5 ** (epoch // period) if period > 0 else lr0
