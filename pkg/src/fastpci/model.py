"""End-to-end interpolation network: pyramid flow, warping, refinement, fusion."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .config import ModelConfig
from .errors import ArgumentError
from .nn import Module
from .pyramid import PyramidNet, PyramidState, pyramid_forward
from .refine import FusionNet, FusionResult, RefineNet, fuse, refine


@dataclass
class InterpolationOutput:
    final: ad.Tensor
    forward_est: ad.Tensor
    backward_est: ad.Tensor
    refined_fwd: ad.Tensor
    levels: list
    state: PyramidState
    fusion: FusionResult

    @property
    def level_sizes(self):
        return self.state.sizes


class FastPCI(Module):
    def __init__(self, cfg=None):
        cfg = ModelConfig() if cfg is None else cfg
        self.cfg = cfg
        rng = np.random.default_rng(cfg.seed)
        self.pyramid = PyramidNet(cfg, rng)
        self.refine_net = None
        if cfg.flags.refine_net:
            in_dim = 3 + cfg.predictor_channels[-1]
            self.refine_net = RefineNet(in_dim, cfg.refine_channels, cfg.refine_divisor, cfg.refine_k, rng)
        self.fusion = FusionNet(cfg.fusion_hidden, rng)
        self.assign_names()

    def __call__(self, pc0, pc1, t, rng=None, nearest_fusion=False):
        return self.forward(pc0, pc1, t, rng, nearest_fusion)

    def forward(self, pc0, pc1, t, rng=None, nearest_fusion=False):
        """Interpolate frame ``t`` from ``pc0`` and ``pc1`` (L x 3 arrays).

        ``rng`` drives the fusion anchor sampling; a fixed default seed keeps
        inference deterministic.
        """
        if not 0.0 < t < 1.0:
            raise ArgumentError(f"t must lie in (0, 1), got {t}")
        rng = np.random.default_rng(0) if rng is None else rng
        pc0 = np.asarray(pc0, dtype=np.float64)
        pc1 = np.asarray(pc1, dtype=np.float64)
        # the network sees coordinates relative to the pair centroid; outputs are
        # shifted back to the input frame
        center = np.concatenate([pc0, pc1]).mean(axis=0)
        dtype = self.pyramid.encoder.layers[0].weight.dtype
        state = pyramid_forward(pc0 - center, pc1 - center, t, self.pyramid)
        top = state.levels[0]
        fwd, bwd = top.pred_fwd, top.pred_bwd
        feats = ad.concat([fwd, top.motion_fwd], axis=-1)
        refined = refine(fwd, feats, self.refine_net, enabled=self.refine_net is not None)
        fused = fuse(refined, bwd, t, min(self.cfg.fusion_k, 2 * fwd.shape[0]), self.fusion, rng,
                     nearest=nearest_fusion)
        shift = ad.Tensor(center.astype(dtype))

        def back(x):
            return ad.add(x, shift)

        return InterpolationOutput(
            final=back(fused.points),
            forward_est=back(fwd),
            backward_est=back(bwd),
            refined_fwd=back(refined),
            levels=[back(lv.prediction()) for lv in state.levels],
            state=state,
            fusion=fused,
        )

    def predict(self, pc0, pc1, t, seed=0):
        """Inference helper returning a numpy array."""
        with ad.no_grad():
            out = self.forward(pc0, pc1, t, np.random.default_rng(seed))
        return out.final.data.astype(np.float64)
