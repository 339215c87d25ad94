"""Point cloud files: ASCII ``.xyz`` and KITTI-style ``.bin`` float32 quadruples."""
from __future__ import annotations

from pathlib import Path

import numpy as np

from .errors import ArgumentError, FormatError
from .kernels import PointCloud

SUFFIXES = (".xyz", ".bin")


def _suffix(path):
    suffix = Path(path).suffix.lower()
    if suffix not in SUFFIXES:
        raise FormatError(f"unsupported extension {suffix!r} (expected .xyz or .bin)", path=str(path))
    return suffix


def _parse_xyz(text, path):
    rows = []
    for lineno, line in enumerate(text.splitlines(), start=1):
        tokens = line.split()
        if not tokens:
            continue
        if len(tokens) != 3:
            raise FormatError(f"expected 3 values, got {len(tokens)}", path=str(path), location=f"line {lineno}")
        try:
            rows.append([float(tok) for tok in tokens])
        except ValueError:
            raise FormatError(f"non-numeric token in {line.strip()!r}", path=str(path),
                              location=f"line {lineno}") from None
    return np.array(rows, dtype=np.float64).reshape(-1, 3)


def read_points(path):
    """Load an ``L x 3`` array; ``.bin`` reflectance is dropped."""
    suffix = _suffix(path)
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise FormatError(f"cannot read file: {exc.strerror}", path=str(path)) from None
    if suffix == ".bin":
        if len(raw) % 16:
            raise FormatError(f"size {len(raw)} is not a multiple of 16 bytes", path=str(path),
                              location=f"byte {len(raw) - len(raw) % 16}")
        quad = np.frombuffer(raw, dtype="<f4").reshape(-1, 4)
        pts = quad[:, :3].astype(np.float32)
    else:
        try:
            text = raw.decode("ascii")
        except UnicodeDecodeError as exc:
            raise FormatError("non-ASCII content", path=str(path), location=f"byte {exc.start}") from None
        pts = _parse_xyz(text, path)
    if len(pts) == 0:
        raise FormatError("no points", path=str(path))
    if not np.all(np.isfinite(pts)):
        bad = int(np.nonzero(~np.isfinite(pts).all(axis=1))[0][0])
        where = f"line {bad + 1}" if suffix == ".xyz" else f"byte {16 * bad}"
        raise FormatError("non-finite coordinate", path=str(path), location=where)
    return pts


def read_cloud(path):
    return PointCloud(read_points(path))


def write_cloud(path, pc):
    """Write a cloud (PointCloud or array); ``.xyz`` keeps 9 significant digits."""
    pts = pc.points if isinstance(pc, PointCloud) else np.asarray(pc)
    if pts.ndim != 2 or pts.shape[1] != 3:
        raise ArgumentError(f"points must be L x 3, got {pts.shape}")
    suffix = _suffix(path)
    if suffix == ".bin":
        quad = np.zeros((len(pts), 4), dtype="<f4")
        quad[:, :3] = pts
        Path(path).write_bytes(quad.tobytes())
    else:
        lines = ["%.9g %.9g %.9g" % tuple(p) for p in pts]
        Path(path).write_text("\n".join(lines) + "\n", newline="\n")
