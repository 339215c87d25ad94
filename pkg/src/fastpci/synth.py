"""Seeded synthetic dynamic scenes: a ground plane plus rigidly moving boxes and spheres.

Intermediate frames use the exact fractional rigid transform (rotation by
``t * angle`` about the object's centre, translation ``t * v``), so linear
flow only approximates rotating objects.
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cloudio import read_points, write_cloud
from .config import DataConfig
from .errors import ArgumentError

TIMES = (0.0, 0.25, 0.5, 0.75, 1.0)
KINDS = ("plane", "box", "sphere")
TRAIN, TEST = 0, 1


@dataclass
class ObjectSpec:
    kind: str
    center: tuple
    size: tuple  # half extents (box, plane) or (radius,) for a sphere
    velocity: tuple = (0.0, 0.0, 0.0)
    angular: tuple = (0.0, 0.0, 0.0)  # axis * angle, radians per frame interval
    points: int = 0

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ArgumentError(f"unknown object kind {self.kind!r}")
        self.center = tuple(float(x) for x in self.center)
        self.size = tuple(float(x) for x in self.size)
        self.velocity = tuple(float(x) for x in self.velocity)
        self.angular = tuple(float(x) for x in self.angular)
        if not np.all(np.isfinite(self.velocity + self.angular)):
            raise ArgumentError("object velocities must be finite")
        if self.points < 0:
            raise ArgumentError("negative point count")


@dataclass
class SceneSpec:
    seed: int
    objects: list = field(default_factory=list)
    noise_sigma: float = 0.005

    def __post_init__(self):
        self.objects = [o if isinstance(o, ObjectSpec) else ObjectSpec(**o) for o in self.objects]
        if not self.noise_sigma >= 0:
            raise ArgumentError(f"noise sigma must be >= 0, got {self.noise_sigma}")

    @property
    def points(self):
        return sum(o.points for o in self.objects)

    def to_json(self):
        return dataclasses.asdict(self)


@dataclass
class Sequence:
    times: tuple
    frames: np.ndarray  # (5, L, 3) with noise
    clean: np.ndarray  # (5, L, 3) exact rigid transforms
    gt_flow_forward: np.ndarray
    labels: np.ndarray
    spec: SceneSpec = None

    def frame(self, t):
        return self.frames[self.times.index(t)]


def rotation_matrix(axis_angle):
    """Rodrigues' formula for an axis-angle vector."""
    w = np.asarray(axis_angle, dtype=np.float64)
    theta = float(np.sqrt(w @ w))
    if theta == 0.0:
        return np.eye(3)
    k = w / theta
    K = np.array([[0, -k[2], k[1]], [k[2], 0, -k[0]], [-k[1], k[0], 0]])
    return np.eye(3) + np.sin(theta) * K + (1 - np.cos(theta)) * (K @ K)


def rigid_transform(points, obj, t):
    c = np.asarray(obj.center)
    R = rotation_matrix(t * np.asarray(obj.angular))
    return (points - c) @ R.T + c + t * np.asarray(obj.velocity)


def _sample_surface(obj, rng):
    n = obj.points
    c = np.asarray(obj.center)
    if obj.kind == "sphere":
        d = rng.standard_normal((n, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        return c + obj.size[0] * d
    h = np.asarray(obj.size)
    if obj.kind == "plane":
        uv = rng.uniform(-1.0, 1.0, (n, 2))
        return c + np.column_stack([uv[:, 0] * h[0], uv[:, 1] * h[1], np.zeros(n)])
    # box: pick a face with probability proportional to its area
    areas = np.array([h[1] * h[2], h[0] * h[2], h[0] * h[1]])
    axis = rng.choice(3, n, p=areas / areas.sum())
    sign = rng.choice([-1.0, 1.0], n)
    p = rng.uniform(-1.0, 1.0, (n, 3))
    p[np.arange(n), axis] = sign
    return c + p * h


def generate(spec):
    """Frames at ``TIMES`` for a scene; points are ordered by object, then generation index."""
    if spec.points < 1:
        raise ArgumentError("scene has no points")
    rng = np.random.default_rng([spec.seed, 1])
    base, clean_t, labels = [], [], []
    for oid, obj in enumerate(spec.objects):
        if obj.points == 0:
            continue
        pts = _sample_surface(obj, rng)
        base.append(pts)
        clean_t.append(np.stack([rigid_transform(pts, obj, t) for t in TIMES]))
        labels.append(np.full(obj.points, oid, dtype=np.int64))
    clean = np.concatenate(clean_t, axis=1)
    noise = spec.noise_sigma * rng.standard_normal(clean.shape) if spec.noise_sigma > 0 else 0.0
    frames = clean + noise
    return Sequence(TIMES, frames, clean, clean[-1] - clean[0], np.concatenate(labels), spec)


def random_scene(seed, points=1024, cfg=None):
    """Ground plane plus ``cfg.num_objects`` moving boxes/spheres with random motion."""
    cfg = DataConfig() if cfg is None else cfg
    if points < 1:
        raise ArgumentError("scene needs at least one point")
    rng = np.random.default_rng([seed, 0])
    half = cfg.extent / 2
    n_plane = int(round(cfg.plane_fraction * points)) if cfg.num_objects else points
    share = np.full(cfg.num_objects, (points - n_plane) // max(cfg.num_objects, 1), dtype=np.int64)
    share[:(points - n_plane) - int(share.sum())] += 1
    objects = [ObjectSpec("plane", (0.0, 0.0, 0.0), (half, half, 0.0), points=n_plane)]
    for i in range(cfg.num_objects):
        kind = "box" if rng.random() < 0.5 else "sphere"
        if kind == "box":
            size = tuple(rng.uniform(0.4, 1.5, 3))
            lift = size[2]
        else:
            size = (float(rng.uniform(0.5, 1.5)),)
            lift = size[0]
        xy = rng.uniform(-0.6 * half, 0.6 * half, 2)
        speed = rng.uniform(0.2, 1.0) * cfg.max_speed
        heading = rng.uniform(0, 2 * np.pi)
        vel = (speed * np.cos(heading), speed * np.sin(heading), 0.0)
        yaw = np.deg2rad(rng.uniform(-cfg.max_angular_deg, cfg.max_angular_deg))
        objects.append(ObjectSpec(kind, (xy[0], xy[1], lift), size, vel, (0.0, 0.0, yaw), int(share[i])))
    return SceneSpec(int(seed), objects, cfg.noise_sigma)


def split_seed(seed, split, index):
    """Scene seed for ``index`` in a split; train and test occupy disjoint ranges."""
    if not 0 <= index < 2**31 or not 0 <= seed < 2**31:
        raise ArgumentError("seed and index must fit in 31 bits")
    return (seed << 32) | (split << 31) | index


class Split:
    """Lazily generated, cached sequences of one dataset split."""

    def __init__(self, seeds, points, cfg):
        self.seeds = list(seeds)
        self.points = points
        self.cfg = cfg
        self._cache = {}

    def __len__(self):
        return len(self.seeds)

    def __getitem__(self, i):
        if i not in self._cache:
            self._cache[i] = generate(random_scene(self.seeds[i], self.points, self.cfg))
        return self._cache[i]

    def __iter__(self):
        return (self[i] for i in range(len(self)))


def dataset(seed, n_train, n_test, template=None, points=1024):
    """``(train, test)`` splits with deterministic order and disjoint scene seeds."""
    if n_train < 1 or n_test < 1:
        raise ArgumentError("split sizes must be at least 1")
    cfg = DataConfig() if template is None else template
    train = Split([split_seed(seed, TRAIN, i) for i in range(n_train)], points, cfg)
    test = Split([split_seed(seed, TEST, i) for i in range(n_test)], points, cfg)
    return train, test


def write_sequence(seq, directory):
    """``frame_<k>.xyz`` per time step plus ``manifest.json``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    files = []
    for k, frame in enumerate(seq.frames):
        name = f"frame_{k}.xyz"
        write_cloud(directory / name, frame)
        files.append(name)
    manifest = {"seed": seq.spec.seed if seq.spec else None,
                "spec": seq.spec.to_json() if seq.spec else None,
                "times": list(seq.times), "files": files}
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")


def read_sequence(directory):
    """Frames of a written sequence; ground truth flow is regenerated when the scene spec is present."""
    directory = Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    frames = np.stack([read_points(directory / f) for f in manifest["files"]]).astype(np.float64)
    spec = SceneSpec(**manifest["spec"]) if manifest.get("spec") else None
    if spec is not None:
        ref = generate(spec)
        return Sequence(tuple(manifest["times"]), frames, ref.clean, ref.gt_flow_forward, ref.labels, spec)
    return Sequence(tuple(manifest["times"]), frames, frames, frames[-1] - frames[0],
                    np.zeros(frames.shape[1], dtype=np.int64))


def write_dataset(train, test, root):
    root = Path(root)
    for name, split in (("train", train), ("test", test)):
        for i, seq in enumerate(split):
            write_sequence(seq, root / name / f"{i:05d}")
    (root / "manifest.json").write_text(json.dumps(
        {"train": len(train), "test": len(test), "times": list(TIMES)}, indent=2) + "\n")


def read_split(root, name):
    return [read_sequence(d) for d in sorted((Path(root) / name).iterdir()) if d.is_dir()]
