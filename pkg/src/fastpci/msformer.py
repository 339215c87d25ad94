"""Motion-structure transformer block with dual-direction cross attention.

Both temporal directions are processed as one batch of two entries: the
forward entry stacks frame-0 features as queries against frame-1 keys and
values, the backward entry the reverse.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError
from .nn import MLP, LayerNorm, Module, Parameter, uniform_init

DUAL_CROSS = "dual_cross"
SELF_ATTENTION = "self_attention"


def coordinate_map(L):
    """Index grid in [0, 1]: row ``i`` is ``(i/(L-1),) * 3``; a single point maps to zeros."""
    if L < 1:
        raise ArgumentError(f"coordinate map needs L >= 1, got {L}")
    if L == 1:
        return np.zeros((1, 3))
    col = np.arange(L) / (L - 1)
    return np.repeat(col[:, None], 3, axis=1)


def attention_map(q, k):
    """Row-softmax of ``q k^T / sqrt(d)`` where ``d`` is the key width."""
    if q.shape[-1] != k.shape[-1]:
        raise ShapeError(f"attention: query {q.shape} and key {k.shape} widths differ")
    logits = ad.scale(ad.matmul(q, ad.transpose_last2(k)), 1.0 / np.sqrt(k.shape[-1]))
    return ad.softmax(logits, axis=-1)


def structure_head(A, v, w_s):
    """``(A v) W_S``."""
    if A.shape[-1] != v.shape[-2]:
        raise ShapeError(f"structure head: attention {A.shape} vs values {v.shape}")
    return ad.linear(ad.matmul(A, v), w_s)


def motion_head(A, b1, w_m):
    """``(A B1 - B1) W_M``: displacement of the attention-warped coordinate embedding."""
    if A.shape[-1] != b1.shape[-2] or A.shape[-2] != b1.shape[-2]:
        raise ShapeError(f"motion head: attention {A.shape} vs embedding {b1.shape}")
    return ad.linear(ad.sub(ad.matmul(A, b1), b1), w_m)


def _stack(a, b):
    return ad.concat([ad.reshape(a, (1,) + a.shape), ad.reshape(b, (1,) + b.shape)], axis=0)


def _entry(x, i):
    return ad.gather_rows(x, np.int64(i))


@dataclass
class MSBlockOutput:
    """Per-direction results; entry 0 is forward (0 -> 1), entry 1 backward."""

    A: ad.Tensor
    S: ad.Tensor
    M: ad.Tensor
    F_next: tuple

    def direction(self, i):
        return {"A": _entry(self.A, i), "S": _entry(self.S, i), "M": _entry(self.M, i)}


class MSBlock(Module):
    def __init__(self, channels, attn_dim, rng, structure_branch=True):
        dtype = ad.get_default_dtype()

        def proj(n_in, n_out):
            return Parameter(uniform_init(rng, n_in, (n_in, n_out)).astype(dtype))

        self.channels = channels
        self.attn_dim = attn_dim
        self.structure_branch = structure_branch
        self.norm = LayerNorm(channels)
        self.wq = proj(channels, attn_dim)
        self.wk = proj(channels, attn_dim)
        self.wv = proj(channels, attn_dim)
        self.wb = proj(3, attn_dim)
        self.wm = proj(attn_dim, attn_dim)
        if structure_branch:
            self.ws = proj(attn_dim, attn_dim)
            self.update = MLP([attn_dim, channels, channels], rng, final_act=False)

    @property
    def structure_dim(self):
        return self.attn_dim if self.structure_branch else self.channels

    def attend(self, F0, F1, mode=DUAL_CROSS):
        """Normalised features, projections and attention maps for both directions."""
        if F0.shape != F1.shape:
            raise ShapeError(f"ms block: frame features {F0.shape} and {F1.shape} differ")
        if F0.shape[-1] != self.channels:
            raise ShapeError(f"ms block expects {self.channels} channels, got {F0.shape[-1]}")
        n0, n1 = self.norm(F0), self.norm(F1)
        query_src = _stack(n0, n1)
        if mode == DUAL_CROSS:
            kv_src = _stack(n1, n0)
        elif mode == SELF_ATTENTION:
            kv_src = query_src
        else:
            raise ArgumentError(f"unknown attention mode {mode!r}")
        q = ad.linear(query_src, self.wq)
        k = ad.linear(kv_src, self.wk)
        v = ad.linear(kv_src, self.wv)
        return q, k, v, attention_map(q, k)

    def __call__(self, F0, F1, mode=DUAL_CROSS):
        q, k, v, A = self.attend(F0, F1, mode)
        L = F0.shape[0]
        b1 = ad.linear(ad.Tensor(coordinate_map(L).astype(F0.dtype)), self.wb)
        M = motion_head(A, b1, self.wm)
        if self.structure_branch:
            S = structure_head(A, v, self.ws)
            F_next = (ad.add(F0, self.update(_entry(S, 0))), ad.add(F1, self.update(_entry(S, 1))))
        else:
            S = _stack(F0, F1)
            F_next = (F0, F1)
        return MSBlockOutput(A=A, S=S, M=M, F_next=F_next)
