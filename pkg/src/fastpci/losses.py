"""Training objective: interpolation, half-way cycle and multiscale Chamfer terms."""
from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .config import LossWeights
from .errors import ArgumentError, ContractError
from .kernels import fps
from .metrics import chamfer


def pyramid_gt(gt, level_sizes):
    """FPS subsets (start index 0) of the ground truth at each level size."""
    gt = np.asarray(gt)
    sizes = list(level_sizes)
    if any(b > a for a, b in zip(sizes, sizes[1:])):
        raise ArgumentError(f"level sizes must be descending, got {sizes}")
    out = []
    for n in sizes:
        if n > len(gt):
            raise ArgumentError(f"level size {n} exceeds ground truth size {len(gt)}")
        out.append(gt[fps(gt, n, 0)])
    return out


def total_loss(outputs, gt, weights=None, gt_levels=None):
    """Flag-masked sum of all terms. Returns ``(total, {term: float})``."""
    weights = LossWeights() if weights is None else weights
    gt = np.asarray(gt)
    if len(gt) == 0:
        raise ArgumentError("total_loss: empty ground truth")
    dtype = outputs.final.dtype
    gt_t = ad.Tensor(gt.astype(dtype))
    terms = {"intp": chamfer(outputs.final, gt_t)}
    if weights.cd1:
        terms["cd1"] = chamfer(outputs.forward_est, gt_t)
    if weights.cd2:
        terms["cd2"] = chamfer(outputs.backward_est, gt_t)
    if weights.ms:
        levels = getattr(outputs, "levels", None)
        if not levels:
            raise ContractError("multiscale loss enabled but no per-level predictions supplied")
        if len(levels) != len(weights.alpha):
            raise ContractError(f"{len(levels)} level predictions for {len(weights.alpha)} weights")
        if gt_levels is None:
            # a level prediction may stack both warp directions, so sizes come from the pyramid
            sizes = getattr(outputs, "level_sizes", None) or [lv.shape[0] for lv in levels]
            gt_levels = pyramid_gt(gt, sizes)
        ms = None
        for a, pred, g in zip(weights.alpha, levels, gt_levels):
            term = ad.scale(chamfer(pred, ad.Tensor(np.asarray(g).astype(dtype))), a)
            ms = term if ms is None else ad.add(ms, term)
        terms["ms"] = ms
    total = None
    for v in terms.values():
        total = v if total is None else ad.add(total, v)
    return total, {k: float(v.data) for k, v in terms.items()}
