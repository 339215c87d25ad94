"""Model, loss, training and data configuration with JSON round-tripping."""
from __future__ import annotations

import dataclasses
import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

from .errors import ArgumentError

ALPHA_RANGE = (0.025, 0.25)
ATTENTION_ALIASES = {"self": "self_attention", "cross": "dual_cross", "dual": "dual_cross"}


@dataclass
class Flags:
    structure_branch: bool = True
    motion_compensation: bool = True
    attention_mode: str = "dual_cross"
    refine_net: bool = True

    def __post_init__(self):
        self.attention_mode = ATTENTION_ALIASES.get(self.attention_mode, self.attention_mode)


@dataclass
class ModelConfig:
    points: int = 1024
    divisors: tuple = (1, 4, 32)
    channels: tuple = (32, 64, 128)
    attn_dim: int = 64
    knn_k: int = 8
    cost_channels: int = 32
    predictor_channels: tuple = (64, 64, 64)
    upsample_k: int = 3
    refine_channels: tuple = (32, 64, 64)
    refine_divisor: int = 4
    refine_k: int = 16
    fusion_k: int = 8
    fusion_hidden: int = 16
    seed: int = 0
    flags: Flags = field(default_factory=Flags)

    def __post_init__(self):
        if isinstance(self.flags, dict):
            self.flags = Flags(**self.flags)
        for name in ("divisors", "channels", "predictor_channels", "refine_channels"):
            setattr(self, name, tuple(getattr(self, name)))
        if len(self.divisors) != 3 or len(self.channels) != 3:
            raise ArgumentError("the pyramid has exactly three stages")
        if self.divisors[0] != 1 or any(b <= a for a, b in zip(self.divisors, self.divisors[1:])):
            raise ArgumentError(f"divisors must start at 1 and increase, got {self.divisors}")
        if any(b % a for a, b in zip(self.divisors, self.divisors[1:])):
            raise ArgumentError(f"each divisor must be a multiple of the previous, got {self.divisors}")
        if min(self.channels) <= 0 or self.attn_dim <= 0:
            raise ArgumentError("channel widths must be positive")
        if self.points < self.divisors[-1]:
            raise ArgumentError(f"need at least {self.divisors[-1]} points, got {self.points}")
        if self.flags.attention_mode not in ("dual_cross", "self_attention"):
            raise ArgumentError(f"unknown attention mode {self.flags.attention_mode!r}")

    def level_sizes(self, n=None):
        n = self.points if n is None else n
        return [n // d for d in self.divisors]


@dataclass
class LossWeights:
    alpha: tuple = (0.05, 0.1, 0.2)
    cd1: bool = True
    cd2: bool = True
    ms: bool = True

    def __post_init__(self):
        self.alpha = tuple(float(a) for a in self.alpha)
        if any(a < 0 for a in self.alpha):
            raise ArgumentError(f"loss weights must be nonnegative, got {self.alpha}")
        lo, hi = ALPHA_RANGE
        if any(not lo <= a <= hi for a in self.alpha):
            warnings.warn(f"pyramid loss weights {self.alpha} outside the usual range {ALPHA_RANGE}",
                          stacklevel=2)

    def to_json(self):
        return {"alpha0": self.alpha[0], "alpha1": self.alpha[1], "alpha2": self.alpha[2],
                "cd1": self.cd1, "cd2": self.cd2, "ms": self.ms}

    @classmethod
    def from_json(cls, d):
        d = dict(d)
        alpha = tuple(d.pop(f"alpha{i}", a) for i, a in enumerate(cls().alpha))
        return cls(alpha=alpha, **d)


@dataclass
class TrainConfig:
    lr: float = 1e-3
    weight_decay: float = 1e-4
    batch_size: int = 4
    lr_halving_period_epochs: int = 80
    epochs: int = 10
    max_steps: int = 0
    seed: int = 0
    t_sampling: str = "discrete"
    checkpoint_every: int = 0

    def __post_init__(self):
        if self.lr <= 0:
            raise ArgumentError(f"learning rate must be positive, got {self.lr}")
        if self.batch_size < 1:
            raise ArgumentError("batch size must be at least 1")
        if self.t_sampling not in ("discrete", "continuous"):
            raise ArgumentError(f"unknown t sampling {self.t_sampling!r}")


@dataclass
class DataConfig:
    seed: int = 0
    n_train: int = 64
    n_test: int = 16
    num_objects: int = 4
    noise_sigma: float = 0.005
    extent: float = 10.0
    max_speed: float = 1.4
    max_angular_deg: float = 30.0
    plane_fraction: float = 0.4


@dataclass
class Config:
    model: ModelConfig = field(default_factory=ModelConfig)
    loss: LossWeights = field(default_factory=LossWeights)
    train: TrainConfig = field(default_factory=TrainConfig)
    data: DataConfig = field(default_factory=DataConfig)

    def to_json(self):
        return {
            "model": dataclasses.asdict(self.model),
            "loss": self.loss.to_json(),
            "train": dataclasses.asdict(self.train),
            "data": dataclasses.asdict(self.data),
        }

    @classmethod
    def from_json(cls, d):
        unknown = set(d) - {"model", "loss", "train", "data"}
        if unknown:
            raise ArgumentError(f"unknown config sections {sorted(unknown)}")
        try:
            return cls(
                model=ModelConfig(**d.get("model", {})),
                loss=LossWeights.from_json(d.get("loss", {})),
                train=TrainConfig(**d.get("train", {})),
                data=DataConfig(**d.get("data", {})),
            )
        except TypeError as exc:
            raise ArgumentError(f"bad config: {exc}") from None

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_json(), indent=2) + "\n")

    @classmethod
    def load(cls, path):
        return cls.from_json(json.loads(Path(path).read_text()))
