"""Three-stage pyramid estimating forward and backward scene flow coarse to fine."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError
from .kernels import BACKWARD, FORWARD, fps, idw_weights, interpolate_rows, knn, warp_points
from .msformer import MSBlock, MSBlockOutput
from .nn import MLP, Linear, Module


@dataclass
class StageConfig:
    level: int
    point_count_divisor: int
    channels: int
    knn_k: int

    def __post_init__(self):
        if self.level not in (1, 2, 3) or self.channels <= 0 or self.point_count_divisor < 1:
            raise ArgumentError(f"invalid stage config {self}")


def stage_configs(cfg):
    return [StageConfig(i + 1, d, c, cfg.knn_k) for i, (d, c) in enumerate(zip(cfg.divisors, cfg.channels))]


def encode_stage1(pc, mlp):
    """Per-point features from raw coordinates (mini-PointNet, no pooling)."""
    return mlp(pc)


def downsample_stage(pc, features, divisor, mlp, k):
    """FPS to ``len(pc) // divisor`` points, then set abstraction over ``k`` neighbours.

    Returns the selected indices, the sub-cloud and its new features.
    """
    n = len(pc)
    target = n // divisor
    if target < 1:
        raise ArgumentError(f"downsampling {n} points by {divisor} leaves none")
    # keeping every point is the identity selection, not an FPS reordering
    idx = np.arange(n) if target == n else fps(pc, target, 0)
    sub = pc[idx]
    k = min(k, n)
    nb = knn(sub, pc, k).indices
    rel = ad.Tensor((pc[nb] - sub[:, None, :]).astype(features.dtype))
    grouped = ad.concat([ad.gather_rows(features, nb), rel], axis=-1)
    return idx, sub, ad.max_over_axis(mlp(grouped), axis=1)


def cost_volume(pc0_warped, pc1, F0, F1, k, mlp, score=None):
    """Local correlation of each warped source point with its ``k`` target neighbours.

    Per neighbour the MLP sees (feature difference, relative offset, distance);
    the result is max-pooled over neighbours. With ``score`` (a layer mapping the
    MLP output to one logit) a softmax over the neighbours also pools their
    offsets, appending a soft-correspondence displacement as three extra columns.
    """
    pts0 = pc0_warped.data if isinstance(pc0_warped, ad.Tensor) else pc0_warped
    if k > len(pc1):
        raise ArgumentError(f"cost volume: k={k} exceeds {len(pc1)} target points")
    if len(pts0) != F0.shape[0] or len(pc1) != F1.shape[0]:
        raise ShapeError("cost volume: features are not row-aligned with their clouds")
    n = len(pts0)
    nb = knn(pts0, pc1, k).indices
    src = ad.as_tensor(pc0_warped, like=F0)
    rel = ad.sub(ad.Tensor(pc1[nb].astype(F0.dtype)), ad.reshape(src, (n, 1, 3)))
    dist = ad.reshape(ad.l2norm_rows(rel), (n, k, 1))
    fdiff = ad.sub(ad.gather_rows(F1, nb), ad.reshape(F0, (n, 1, -1)))
    h = mlp(ad.concat([fdiff, rel, dist], axis=-1))
    pooled = ad.max_over_axis(h, axis=1)
    if score is None:
        return pooled
    w = ad.softmax(ad.reshape(score(h), (n, k)), axis=-1)
    offset = ad.reduce_sum(ad.mul(rel, ad.reshape(w, (n, k, 1))), axis=1)
    return ad.concat([pooled, offset], axis=-1)


class SFPredictor(Module):
    """Channel-concat of the level inputs -> 3-layer MLP -> motion features -> flow.

    The flow head starts at zero, so an untrained level adds no flow to its prior.
    """

    def __init__(self, in_dim, widths, rng):
        self.mlp = MLP([in_dim] + list(widths), rng)
        self.head = Linear(widths[-1], 3, rng, bias=False, zero_init=True)

    def features(self, inputs):
        rows = {x.shape[0] for x in inputs}
        if len(rows) != 1:
            raise ShapeError(f"sf predictor inputs are not row-aligned: {sorted(rows)}")
        if sum(x.shape[1] for x in inputs) != self.mlp.layers[0].in_dim:
            raise ShapeError("sf predictor input width does not match its configuration")
        return self.mlp(ad.concat(inputs, axis=-1))

    def flow(self, motion, prior=None):
        sf = self.head(motion)
        return sf if prior is None else ad.add(prior, sf)


def sf_predictor(inputs, predictor, prior=None, compensate=None):
    """Motion features and scene flow for one level.

    ``compensate`` (if given) refines the motion features before the flow head;
    ``prior`` is the upsampled coarser flow the prediction is residual to.
    """
    motion = predictor.features([x for x in inputs if x is not None])
    if compensate is not None:
        motion = compensate(motion)
    return motion, predictor.flow(motion, prior)


class MotionCompensation(Module):
    def __init__(self, motion_dim, structure_dim, rng):
        self.structure_mlp = MLP([structure_dim, motion_dim, motion_dim, motion_dim], rng, final_act=False)
        self.motion_conv = Linear(motion_dim, motion_dim, rng)
        self.offset_head = MLP([2 * motion_dim, motion_dim, motion_dim], rng, final_act=False)

    def __call__(self, M, S):
        return motion_compensation(M, S, self)


def motion_compensation(M, S, block, enabled=True):
    """Residual correction of motion features conditioned on structure features."""
    if not enabled or block is None:
        return M
    if M.shape[0] != S.shape[0]:
        raise ShapeError(f"motion compensation: {M.shape} and {S.shape} are not row-aligned")
    s = ad.sigmoid(block.structure_mlp(S))
    m = ad.leaky_relu(block.motion_conv(M), 0.1)
    return ad.add(M, block.offset_head(ad.concat([s, m], axis=-1)))


@dataclass
class LevelState:
    level: int
    pc0: np.ndarray
    pc1: np.ndarray
    F0: ad.Tensor
    F1: ad.Tensor
    block: Optional[MSBlockOutput] = None
    motion_fwd: Optional[ad.Tensor] = None
    motion_bwd: Optional[ad.Tensor] = None
    sf_fwd: Optional[ad.Tensor] = None
    sf_bwd: Optional[ad.Tensor] = None
    pred_fwd: Optional[ad.Tensor] = None
    pred_bwd: Optional[ad.Tensor] = None

    @property
    def size(self):
        return len(self.pc0)

    def prediction(self):
        """Level estimate of the intermediate frame: forward and backward warps together."""
        return ad.concat([self.pred_fwd, self.pred_bwd], axis=0)


@dataclass
class PyramidState:
    levels: list = field(default_factory=list)
    t: float = 0.5

    @property
    def sizes(self):
        return [lv.size for lv in self.levels]


class PyramidNet(Module):
    def __init__(self, cfg, rng):
        self.cfg = cfg
        flags = cfg.flags
        c1, c2, c3 = cfg.channels
        width = cfg.predictor_channels[-1]
        self.encoder = MLP([3, c1, c1, c1], rng, final_act=False)
        self.down = [MLP([c1 + 3, c2, c2], rng), MLP([c2 + 3, c3, c3], rng)]
        self.blocks = [MSBlock(c, cfg.attn_dim, rng, flags.structure_branch) for c in cfg.channels]
        self.cost = [MLP([c + 4, cfg.cost_channels, cfg.cost_channels], rng) for c in cfg.channels]
        sdims = [b.structure_dim for b in self.blocks]
        cost_dim = cfg.cost_channels + 3
        in_dims = [
            c1 + cost_dim + 3 + width,
            c2 + cost_dim + cfg.attn_dim + sdims[1] + 3 + width,
            c3 + cost_dim + cfg.attn_dim + sdims[2],
        ]
        self.predictors = [SFPredictor(d, cfg.predictor_channels, rng) for d in in_dims]
        self.compensation = None
        if flags.motion_compensation:
            self.compensation = [MotionCompensation(width, s, rng) for s in sdims]
        self.cost_score = [Linear(cfg.cost_channels, 1, rng) for _ in cfg.channels]

    def __call__(self, pc0, pc1, t):
        return pyramid_forward(pc0, pc1, t, self)


def pyramid_forward(pc0, pc1, t, net):
    """Encode both frames fine -> coarse, then predict flows coarse -> fine and warp."""
    cfg = net.cfg
    pc0 = np.asarray(pc0)
    pc1 = np.asarray(pc1)
    if pc0.shape != pc1.shape:
        raise ShapeError(f"input frames differ in shape: {pc0.shape} vs {pc1.shape}")
    if not 0.0 < t < 1.0:
        raise ArgumentError(f"t must lie in (0, 1), got {t}")
    dtype = net.encoder.layers[0].weight.dtype
    pc0 = pc0.astype(dtype)
    pc1 = pc1.astype(dtype)
    mode = cfg.flags.attention_mode
    state = PyramidState(t=t)

    F0 = encode_stage1(ad.Tensor(pc0), net.encoder)
    F1 = encode_stage1(ad.Tensor(pc1), net.encoder)
    p0, p1 = pc0, pc1
    for li in range(3):
        if li > 0:
            ratio = cfg.divisors[li] // cfg.divisors[li - 1]
            _, p0, F0 = downsample_stage(p0, F0, ratio, net.down[li - 1], cfg.knn_k)
            _, p1, F1 = downsample_stage(p1, F1, ratio, net.down[li - 1], cfg.knn_k)
        out = net.blocks[li](F0, F1, mode)
        F0, F1 = out.F_next
        state.levels.append(LevelState(li + 1, p0, p1, F0, F1, block=out))

    prev = None
    for li in (2, 1, 0):
        lv = state.levels[li]
        fwd = lv.block.direction(0)
        bwd = lv.block.direction(1)
        k = min(cfg.knn_k, lv.size)
        if prev is None:
            prior_f = prior_b = up_mf = up_mb = None
        else:
            i0, w0 = idw_weights(prev.pc0, lv.pc0, cfg.upsample_k)
            i1, w1 = idw_weights(prev.pc1, lv.pc1, cfg.upsample_k)
            prior_f = interpolate_rows(prev.sf_fwd, i0, w0)
            prior_b = interpolate_rows(prev.sf_bwd, i1, w1)
            up_mf = interpolate_rows(prev.motion_fwd, i0, w0)
            up_mb = interpolate_rows(prev.motion_bwd, i1, w1)
        src0 = lv.pc0 if prior_f is None else warp_points(ad.Tensor(lv.pc0), prior_f, 1.0)
        src1 = lv.pc1 if prior_b is None else warp_points(ad.Tensor(lv.pc1), prior_b, 1.0)
        cost_f = cost_volume(src0, lv.pc1, lv.F0, lv.F1, k, net.cost[li], net.cost_score[li])
        cost_b = cost_volume(src1, lv.pc0, lv.F1, lv.F0, k, net.cost[li], net.cost_score[li])
        if li == 0:
            in_f = [lv.F0, cost_f, prior_f, up_mf]
            in_b = [lv.F1, cost_b, prior_b, up_mb]
        else:
            in_f = [lv.F0, cost_f, fwd["M"], fwd["S"], prior_f, up_mf]
            in_b = [lv.F1, cost_b, bwd["M"], bwd["S"], prior_b, up_mb]
        comp = net.compensation[li] if net.compensation is not None else None
        comp_f = (lambda m, s=fwd["S"], c=comp: motion_compensation(m, s, c)) if comp else None
        comp_b = (lambda m, s=bwd["S"], c=comp: motion_compensation(m, s, c)) if comp else None
        lv.motion_fwd, lv.sf_fwd = sf_predictor(in_f, net.predictors[li], prior_f, comp_f)
        lv.motion_bwd, lv.sf_bwd = sf_predictor(in_b, net.predictors[li], prior_b, comp_b)
        lv.pred_fwd = warp_points(ad.Tensor(lv.pc0), lv.sf_fwd, t, FORWARD)
        lv.pred_bwd = warp_points(ad.Tensor(lv.pc1), lv.sf_bwd, t, BACKWARD)
        prev = lv
    return state

