"""Training loop, evaluation harness and file-level interpolation."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import autodiff as ad
from . import checkpoint
from .cloudio import read_points, write_cloud
from .config import Config
from .errors import ArgumentError, NumericError
from .kernels import fps
from .losses import total_loss
from .metrics import chamfer, emd
from .model import FastPCI
from .optim import Adam, lr_at
from .synth import TIMES, rigid_transform

log = logging.getLogger(__name__)

EVAL_SLOTS = ((1, 0.25), (2, 0.5), (3, 0.75))
TERMS = ("intp", "cd1", "cd2", "ms")


def build_model(cfg):
    """Model in the configured precision (parameters follow the default dtype)."""
    return FastPCI(cfg.model)


def model_state(model):
    return {name: p.data for name, p in model.named_parameters()}


def save_checkpoint(path, model, cfg=None):
    """Write the binary checkpoint and, if given, the config next to it."""
    path = Path(path)
    checkpoint.save(path, model_state(model))
    if cfg is not None:
        cfg.save(config_path(path))


def config_path(ckpt_path):
    return Path(str(ckpt_path) + ".json")


def load_model(ckpt_path, cfg=None):
    """Rebuild a model from a checkpoint; the config defaults to the sidecar file."""
    if cfg is None:
        side = config_path(ckpt_path)
        cfg = Config.load(side) if side.exists() else Config()
    model = build_model(cfg)
    model.load_state_dict(checkpoint.load(ckpt_path))
    return model, cfg


def frame_at(seq, t):
    """Ground truth at time ``t``: the stored frame, or the noiseless rigid transform."""
    for k, tk in enumerate(seq.times):
        if t == tk:
            return seq.frames[k]
    if seq.spec is None:
        raise ArgumentError(f"no frame at t={t} and no scene spec to synthesize one")
    out = np.empty_like(seq.clean[0])
    for oid, obj in enumerate(seq.spec.objects):
        rows = seq.labels == oid
        out[rows] = rigid_transform(seq.clean[0][rows], obj, t)
    return out


@dataclass
class TrainResult:
    model: FastPCI
    curve: list = field(default_factory=list)
    checkpoint: Path = None

    def curve_csv(self):
        return curve_to_csv(self.curve)


def curve_to_csv(rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(("epoch", "step", "total") + TERMS)
    for r in rows:
        w.writerow([r["epoch"], r["step"], repr(r["total"])] + [repr(r.get(k, 0.0)) for k in TERMS])
    return buf.getvalue()


def _sample_t(rng, mode):
    if mode == "discrete":
        return EVAL_SLOTS[int(rng.integers(len(EVAL_SLOTS)))][1]
    t = 0.0
    while t <= 0.0:
        t = float(rng.random())
    return t


def train(cfg, data, out_dir=None, model=None, max_steps=None):
    """Adam over shuffled minibatches of ``data`` (indexable sequences).

    Each sample draws its own ``t``; the learning rate halves every
    ``lr_halving_period_epochs``. Writes ``model.fpci`` (+ config sidecar),
    periodic ``step_<n>.fpci`` and ``loss.csv`` under ``out_dir``.
    """
    tc = cfg.train
    if len(data) < 1:
        raise ArgumentError("training set is empty")
    model = build_model(cfg) if model is None else model
    opt = Adam(model.parameters(), tc.lr, tc.weight_decay)
    rng = np.random.default_rng(tc.seed)
    limit = tc.max_steps if max_steps is None else max_steps
    out_dir = Path(out_dir) if out_dir is not None else None
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
    curve = []
    step = 0
    for epoch in range(tc.epochs):
        if limit and step >= limit:
            break
        opt.hyper.lr = lr_at(epoch, tc.lr, tc.lr_halving_period_epochs)
        order = rng.permutation(len(data))
        for start in range(0, len(order), tc.batch_size):
            if limit and step >= limit:
                break
            batch = order[start:start + tc.batch_size]
            opt.zero_grad()
            sums = dict.fromkeys(("total",) + TERMS, 0.0)
            for i in batch:
                seq = data[int(i)]
                t = _sample_t(rng, tc.t_sampling)
                out = model(seq.frames[0], seq.frames[-1], t, rng)
                loss, terms = total_loss(out, frame_at(seq, t), cfg.loss)
                value = float(loss.data)
                if not math.isfinite(value):
                    raise NumericError(f"non-finite loss at epoch {epoch} step {step}: "
                                       + ", ".join(f"{k}={v!r}" for k, v in terms.items()))
                ad.backward(ad.scale(loss, 1.0 / len(batch)))
                sums["total"] += value / len(batch)
                for k, v in terms.items():
                    sums[k] += v / len(batch)
            opt.step()
            step += 1
            curve.append({"epoch": epoch, "step": step, **sums})
            log.info("epoch %d step %d loss %.6f", epoch, step, sums["total"])
            if out_dir is not None and tc.checkpoint_every and step % tc.checkpoint_every == 0:
                save_checkpoint(out_dir / f"step_{step}.fpci", model)
    result = TrainResult(model, curve)
    if out_dir is not None:
        result.checkpoint = out_dir / "model.fpci"
        save_checkpoint(result.checkpoint, model, cfg)
        (out_dir / "loss.csv").write_text(curve_to_csv(curve))
    return result


@dataclass
class MetricsReport:
    rows: dict  # frame slot -> (CD, EMD)

    @property
    def average(self):
        cds = [self.rows[k][0] for k, _ in EVAL_SLOTS]
        emds = [self.rows[k][1] for k, _ in EVAL_SLOTS]
        return sum(cds) / len(cds), sum(emds) / len(emds)

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("frame", "CD", "EMD"))
        for k, _ in EVAL_SLOTS:
            w.writerow([k, repr(self.rows[k][0]), repr(self.rows[k][1])])
        avg = self.average
        w.writerow(["Average", repr(avg[0]), repr(avg[1])])
        return buf.getvalue()


def evaluate(predict, sequences, with_emd=True):
    """Mean CD (and EMD) per intermediate slot over ``sequences``.

    ``predict(pc0, pc1, t)`` returns an ``L x 3`` array. Without EMD the EMD
    column is NaN.
    """
    per = {k: ([], []) for k, _ in EVAL_SLOTS}
    for seq in sequences:
        pc0, pc1 = seq.frames[0], seq.frames[-1]
        for k, t in EVAL_SLOTS:
            pred = np.asarray(predict(pc0, pc1, t), dtype=np.float64)
            gt = seq.frames[TIMES.index(t)]
            per[k][0].append(chamfer(pred, gt))
            per[k][1].append(emd(pred, gt) if with_emd else math.nan)
    return MetricsReport({k: (float(np.mean(c)), float(np.mean(e))) for k, (c, e) in per.items()})


def copy_frame0(pc0, pc1, t):
    return pc0


def model_predictor(model, seed=0):
    def predict(pc0, pc1, t):
        return model.predict(pc0, pc1, t, seed)

    return predict


def resample(points, n):
    """FPS down to ``n`` points, or cyclic duplication up to ``n`` (with a warning)."""
    points = np.asarray(points)
    if len(points) == n:
        return points
    if len(points) > n:
        return points[fps(points, n, 0)]
    warnings.warn(f"padding {len(points)} points to {n} by duplication", stacklevel=2)
    return points[np.arange(n) % len(points)]


def interpolate(model, pc0, pc1, t, points=None, seed=0):
    if not 0.0 < t < 1.0:
        raise ArgumentError(f"t must lie in (0, 1), got {t}")
    n = model.cfg.points if points is None else points
    return model.predict(resample(pc0, n), resample(pc1, n), t, seed)


def interpolate_files(ckpt_path, pc0_path, pc1_path, t, out_path, cfg=None):
    if not 0.0 < t < 1.0:
        raise ArgumentError(f"t must lie in (0, 1), got {t}")
    model, _ = load_model(ckpt_path, cfg)
    pc0 = read_points(pc0_path).astype(np.float64)
    pc1 = read_points(pc1_path).astype(np.float64)
    out = interpolate(model, pc0, pc1, t)
    write_cloud(out_path, out)
    return out


def write_manifest(path, **entries):
    Path(path).write_text(json.dumps(entries, indent=2, sort_keys=True) + "\n")
