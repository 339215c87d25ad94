"""Point cloud frame interpolation with a pyramid motion/structure network.

Everything runs on numpy with a small built-in reverse-mode autodiff engine.
"""
from .config import Config, DataConfig, Flags, LossWeights, ModelConfig, TrainConfig
from .kernels import PointCloud, SceneFlow, fps, knn, warp, upsample_flow
from .metrics import chamfer, emd, emd_approx, emd_exact
from .model import FastPCI

__version__ = "0.1.0"

__all__ = [
    "Config", "DataConfig", "Flags", "LossWeights", "ModelConfig", "TrainConfig",
    "PointCloud", "SceneFlow", "fps", "knn", "warp", "upsample_flow",
    "chamfer", "emd", "emd_approx", "emd_exact", "FastPCI",
]
