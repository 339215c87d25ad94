"""Residual U-Net refinement of the forward estimate and attentive fusion of both estimates."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError
from .kernels import fps, idw_weights_tensor, interpolate_rows, knn
from .nn import MLP, Linear, Module


class PointTransformerBlock(Module):
    """Vector attention over a k-neighbourhood with a learned positional encoding.

    ``y_i = x_i + W_o sum_j softmax_j(gamma(q_i - k_j + delta_ij)) * (v_j + delta_ij)``
    with ``delta_ij = pos_mlp(p_i - p_j)``.
    """

    def __init__(self, dim, k, rng):
        self.k = k
        self.wq = Linear(dim, dim, rng, bias=False)
        self.wk = Linear(dim, dim, rng, bias=False)
        self.wv = Linear(dim, dim, rng, bias=False)
        self.pos = MLP([3, dim, dim], rng, final_act=False)
        self.gamma = MLP([dim, dim, dim], rng, final_act=False)
        self.out = Linear(dim, dim, rng)

    def __call__(self, x, pos):
        n = x.shape[0]
        k = min(self.k, n)
        nb = knn(pos.data, pos.data, k).indices
        rel = ad.sub(ad.reshape(pos, (n, 1, 3)), ad.gather_rows(pos, nb))
        delta = self.pos(rel)
        q = ad.reshape(self.wq(x), (n, 1, -1))
        key = ad.gather_rows(self.wk(x), nb)
        val = ad.add(ad.gather_rows(self.wv(x), nb), delta)
        w = ad.softmax(self.gamma(ad.add(ad.sub(q, key), delta)), axis=1)
        return ad.add(x, self.out(ad.reduce_sum(ad.mul(w, val), axis=1)))


def _set_abstraction(pos, feats, target, k, mlp):
    idx = fps(pos.data, target, 0)
    sub = ad.gather_rows(pos, idx)
    nb = knn(sub.data, pos.data, min(k, len(pos.data))).indices
    rel = ad.sub(ad.gather_rows(pos, nb), ad.reshape(sub, (target, 1, 3)))
    grouped = ad.concat([ad.gather_rows(feats, nb), rel], axis=-1)
    return sub, ad.max_over_axis(mlp(grouped), axis=1)


class RefineNet(Module):
    """Three-resolution U-Net; the head predicts per-point offsets and starts at zero."""

    def __init__(self, in_dim, widths, divisor, k, rng):
        c0, c1, c2 = widths
        self.divisor = divisor
        self.k = k
        self.stem = MLP([in_dim, c0, c0], rng)
        self.down = [MLP([c0 + 3, c1, c1], rng), MLP([c1 + 3, c2, c2], rng)]
        self.up = [MLP([c2 + c1, c1], rng), MLP([c1 + c0, c0], rng)]
        self.blocks = [PointTransformerBlock(c, k, rng) for c in (c0, c1, c2, c1, c0)]
        self.head = Linear(c0, 3, rng, zero_init=True)

    def __call__(self, points, features):
        n = points.shape[0]
        p0 = points
        f0 = self.blocks[0](self.stem(features), p0)
        n1 = max(1, n // self.divisor)
        p1, f1 = _set_abstraction(p0, f0, n1, self.k, self.down[0])
        f1 = self.blocks[1](f1, p1)
        n2 = max(1, n1 // self.divisor)
        p2, f2 = _set_abstraction(p1, f1, n2, self.k, self.down[1])
        f2 = self.blocks[2](f2, p2)
        i, w = idw_weights_tensor(p2, p1, 3)
        g1 = self.up[0](ad.concat([interpolate_rows(f2, i, w), f1], axis=-1))
        g1 = self.blocks[3](g1, p1)
        i, w = idw_weights_tensor(p1, p0, 3)
        g0 = self.up[1](ad.concat([interpolate_rows(g1, i, w), f0], axis=-1))
        g0 = self.blocks[4](g0, p0)
        return self.head(g0)


def refine(forward_est, features, net, enabled=True):
    """``forward_est + offsets``; returns the input object itself when disabled."""
    if not enabled or net is None:
        return forward_est
    if forward_est.shape[0] < 1:
        raise ArgumentError("refine: empty estimate")
    if features.shape[0] != forward_est.shape[0]:
        raise ShapeError(f"refine: {features.shape[0]} feature rows for {forward_est.shape[0]} points")
    return ad.add(forward_est, net(forward_est, features))


class FusionNet(Module):
    """Scores each candidate neighbour from (offset, distance, source tag)."""

    def __init__(self, hidden, rng):
        self.mlp = MLP([5, hidden, hidden, 1], rng, final_act=False)


@dataclass
class FusionResult:
    points: ad.Tensor
    weights: ad.Tensor
    anchors: np.ndarray
    neighbors: np.ndarray
    n_forward: int


def anchor_split(L, t):
    """Number of anchors drawn from the forward estimate: ``round((1 - t) L)``."""
    return int(np.floor((1.0 - t) * L + 0.5))


def fuse(refined_fwd, backward_est, t, k, net, rng, nearest=False):
    """Attentive fusion of the two estimates into an ``L``-point cloud.

    Anchors come from both estimates in proportion ``(1 - t) : t``; each output
    point is a softmax-weighted convex combination of its anchor's ``k``
    nearest candidates in the union. ``nearest`` forces all weight onto the
    closest candidate.
    """
    L = refined_fwd.shape[0]
    if backward_est.shape[0] < 1 or L < 1:
        raise ArgumentError("fuse: empty estimate")
    union = ad.concat([refined_fwd, backward_est], axis=0)
    n_union = union.shape[0]
    if k > n_union:
        raise ArgumentError(f"fuse: k={k} exceeds the {n_union} candidate points")
    n_fwd = anchor_split(L, t)
    n_fwd = min(n_fwd, L)
    n_bwd = L - n_fwd
    if n_bwd > backward_est.shape[0]:
        raise ArgumentError("fuse: backward estimate too small for the anchor split")
    a_fwd = np.sort(rng.choice(L, n_fwd, replace=False))
    a_bwd = np.sort(rng.choice(backward_est.shape[0], n_bwd, replace=False)) + L
    anchors = np.concatenate([a_fwd, a_bwd]).astype(np.int64)
    anchor_pts = ad.gather_rows(union, anchors)
    nb = knn(anchor_pts.data, union.data, k).indices
    cand = ad.gather_rows(union, nb)
    if nearest:
        w = np.zeros((L, k), dtype=union.dtype)
        w[:, 0] = 1.0
        weights = ad.Tensor(w)
    else:
        rel = ad.sub(cand, ad.reshape(anchor_pts, (L, 1, 3)))
        dist = ad.reshape(ad.l2norm_rows(rel), (L, k, 1))
        tag = ad.Tensor((nb >= L).astype(union.dtype)[..., None])
        logits = net.mlp(ad.concat([rel, dist, tag], axis=-1))
        weights = ad.softmax(ad.reshape(logits, (L, k)), axis=-1)
    out = ad.reduce_sum(ad.mul(cand, ad.reshape(weights, (L, k, 1))), axis=1)
    return FusionResult(out, weights, anchors, nb, n_fwd)
