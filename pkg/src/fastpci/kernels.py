"""Point-set kernels: farthest point sampling, exact kNN, warping, flow upsampling."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numba
import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, ShapeError

FORWARD = "forward"
BACKWARD = "backward"

# rows of query points handled per block in the brute-force distance kernels
_BLOCK = 512


@dataclass
class PointCloud:
    points: np.ndarray
    features: Optional[np.ndarray] = None

    def __post_init__(self):
        self.points = np.asarray(self.points)
        if self.points.ndim != 2 or self.points.shape[1] != 3:
            raise ShapeError(f"points must be L x 3, got {self.points.shape}")
        if len(self.points) < 1:
            raise ArgumentError("point cloud is empty")
        if not np.all(np.isfinite(self.points)):
            raise ArgumentError("point cloud has non-finite coordinates")
        if self.features is not None:
            self.features = np.asarray(self.features)
            if self.features.ndim != 2 or len(self.features) != len(self.points):
                raise ShapeError(
                    f"features {self.features.shape} do not match {len(self.points)} points")

    def __len__(self):
        return len(self.points)


@dataclass
class SceneFlow:
    vectors: np.ndarray
    direction: str = FORWARD

    def __post_init__(self):
        self.vectors = np.asarray(self.vectors)
        if self.vectors.ndim != 2 or self.vectors.shape[1] != 3:
            raise ShapeError(f"flow must be L x 3, got {self.vectors.shape}")
        if self.direction not in (FORWARD, BACKWARD):
            raise ArgumentError(f"unknown flow direction {self.direction!r}")
        if not np.all(np.isfinite(self.vectors)):
            raise ArgumentError("scene flow has non-finite entries")

    def __len__(self):
        return len(self.vectors)


@dataclass
class NeighborIndex:
    indices: np.ndarray
    distances: np.ndarray


def _points(pc):
    return pc.points if isinstance(pc, PointCloud) else np.asarray(pc)


def sq_distances(query, ref):
    """Dense squared Euclidean distances, accumulated axis by axis.

    Every kernel that ranks points goes through this function so that
    selections agree exactly between fps, knn and the metrics.
    """
    d = np.square(query[:, None, 0] - ref[None, :, 0])
    d += np.square(query[:, None, 1] - ref[None, :, 1])
    d += np.square(query[:, None, 2] - ref[None, :, 2])
    return d


@numba.njit(cache=True)
def _fps_kernel(pts, m, start):
    n = pts.shape[0]
    idx = np.empty(m, dtype=np.int64)
    mind = np.empty(n, dtype=pts.dtype)
    idx[0] = start
    for j in range(n):
        d0 = pts[j, 0] - pts[start, 0]
        d1 = pts[j, 1] - pts[start, 1]
        d2 = pts[j, 2] - pts[start, 2]
        mind[j] = d0 * d0 + d1 * d1 + d2 * d2
    mind[start] = -1.0
    for i in range(1, m):
        best = 0
        for j in range(1, n):
            if mind[j] > mind[best]:
                best = j
        idx[i] = best
        mind[best] = -1.0
        for j in range(n):
            if mind[j] >= 0.0:
                d0 = pts[j, 0] - pts[best, 0]
                d1 = pts[j, 1] - pts[best, 1]
                d2 = pts[j, 2] - pts[best, 2]
                d = d0 * d0 + d1 * d1 + d2 * d2
                if d < mind[j]:
                    mind[j] = d
    return idx


def fps(pc, m, start_index=0):
    """Greedy farthest point sampling; ties go to the lowest index."""
    pts = np.ascontiguousarray(_points(pc))
    n = len(pts)
    if not 1 <= m <= n:
        raise ArgumentError(f"fps: cannot select {m} of {n} points")
    if not 0 <= start_index < n:
        raise ArgumentError(f"fps: start index {start_index} out of range for {n} points")
    return _fps_kernel(pts, m, start_index)


@numba.njit(cache=True)
def _knn_kernel(q, r, k):
    nq = q.shape[0]
    nr = r.shape[0]
    idx = np.empty((nq, k), dtype=np.int64)
    dist = np.empty((nq, k), dtype=q.dtype)
    for i in range(nq):
        cnt = 0
        for j in range(nr):
            d0 = q[i, 0] - r[j, 0]
            d1 = q[i, 1] - r[j, 1]
            d2 = q[i, 2] - r[j, 2]
            d = d0 * d0 + d1 * d1 + d2 * d2
            if cnt == k and d >= dist[i, k - 1]:
                continue
            # insertion after any equal distances keeps ties in index order
            p = cnt if cnt < k else k - 1
            while p > 0 and dist[i, p - 1] > d:
                if p < k:
                    dist[i, p] = dist[i, p - 1]
                    idx[i, p] = idx[i, p - 1]
                p -= 1
            dist[i, p] = d
            idx[i, p] = j
            if cnt < k:
                cnt += 1
    return idx, dist


def _knn_block(d, k):
    n_ref = d.shape[1]
    if k == n_ref:
        order = np.argsort(d, axis=1, kind="stable")
        return order, np.take_along_axis(d, order, axis=1)
    part = np.sort(np.argpartition(d, k - 1, axis=1)[:, :k], axis=1)
    pd = np.take_along_axis(d, part, axis=1)
    # candidates are in index order, so a stable sort on distance breaks ties by index
    sel = np.take_along_axis(part, np.argsort(pd, axis=1, kind="stable"), axis=1)
    # argpartition picks arbitrarily among points tied with the k-th distance
    kth = pd.max(axis=1)
    ambiguous = np.nonzero((d <= kth[:, None]).sum(axis=1) > k)[0]
    if len(ambiguous):
        sel[ambiguous] = np.argsort(d[ambiguous], axis=1, kind="stable")[:, :k]
    return sel, np.take_along_axis(d, sel, axis=1)


def knn(query, reference, k):
    """Exact k nearest neighbours, ascending distance, ties by lowest reference index."""
    q, r = _points(query), _points(reference)
    if not 1 <= k <= len(r):
        raise ArgumentError(f"knn: k={k} must lie in [1, {len(r)}]")
    dtype = np.result_type(q.dtype, r.dtype)
    q = np.ascontiguousarray(q, dtype=dtype)
    r = np.ascontiguousarray(r, dtype=dtype)
    idx, d2 = _knn_kernel(q, r, k)
    return NeighborIndex(idx, np.sqrt(d2))


def knn_dense(query, reference, k):
    """Blocked dense-matrix variant of :func:`knn` (same result, more memory)."""
    q, r = _points(query), _points(reference)
    if not 1 <= k <= len(r):
        raise ArgumentError(f"knn: k={k} must lie in [1, {len(r)}]")
    idx = np.empty((len(q), k), dtype=np.int64)
    dist = np.empty((len(q), k), dtype=np.result_type(q.dtype, r.dtype))
    for s in range(0, len(q), _BLOCK):
        i, dd = _knn_block(sq_distances(q[s:s + _BLOCK], r), k)
        idx[s:s + _BLOCK] = i
        dist[s:s + _BLOCK] = np.sqrt(dd)
    return NeighborIndex(idx, dist)


def warp_points(points, vectors, t, direction=FORWARD):
    """``points + t * flow`` forward, ``points + (1 - t) * flow`` backward.

    Works on numpy arrays and on autodiff tensors alike.
    """
    if direction not in (FORWARD, BACKWARD):
        raise ArgumentError(f"unknown flow direction {direction!r}")
    if points.shape != vectors.shape:
        raise ShapeError(f"warp: points {points.shape} and flow {vectors.shape} differ")
    step = t if direction == FORWARD else 1.0 - t
    if isinstance(points, ad.Tensor) or isinstance(vectors, ad.Tensor):
        return ad.add(points, ad.scale(vectors, step))
    return points + step * vectors


def warp(pc, sf, t):
    """Warp a cloud by a scene flow to time ``t``; features pass through."""
    if len(pc) != len(sf):
        raise ShapeError(f"warp: {len(pc)} points but {len(sf)} flow vectors")
    return PointCloud(warp_points(pc.points, sf.vectors, t, sf.direction), pc.features)


def idw_weights(coarse, fine, k=3, floor=1e-10):
    """Neighbour indices and inverse-distance weights for coarse -> fine transfer.

    A fine point that coincides with a coarse point receives weight one on
    that point only.
    """
    c, f = _points(coarse), _points(fine)
    if len(c) == 0:
        raise ArgumentError("upsample: coarse cloud is empty")
    k = min(k, len(c))
    nb = knn(f, c, k)
    w = 1.0 / np.maximum(nb.distances, floor)
    exact = nb.distances[:, 0] == 0
    w[exact] = 0.0
    w[exact, 0] = 1.0
    w /= w.sum(axis=1, keepdims=True)
    return nb.indices, w


def idw_weights_tensor(coarse, fine, k=3, floor=1e-10):
    """:func:`idw_weights` with weights differentiable in both point sets.

    Neighbour selection is piecewise constant and taken from the raw coordinates.
    """
    c, f = ad.as_tensor(coarse), ad.as_tensor(fine)
    if c.shape[0] == 0:
        raise ArgumentError("upsample: coarse cloud is empty")
    k = min(k, c.shape[0])
    idx = knn(f.data, c.data, k).indices
    rel = ad.sub(ad.gather_rows(c, idx), ad.reshape(f, (f.shape[0], 1, 3)))
    inv = ad.reciprocal(ad.clamp_min(ad.l2norm_rows(rel), floor))
    w = ad.mul(inv, ad.reciprocal(ad.reduce_sum(inv, axis=1, keepdims=True)))
    exact = (ad.l2norm_rows(rel).data[:, 0] == 0)
    if exact.any():
        keep = np.where(exact, 0.0, 1.0)[:, None].astype(w.dtype)
        onehot = np.zeros(w.shape, dtype=w.dtype)
        onehot[exact, 0] = 1.0
        w = ad.add(ad.mul(w, ad.Tensor(keep)), ad.Tensor(onehot))
    return idx, w


def interpolate_rows(values, idx, w):
    """``sum_j w_ij values[idx_ij]`` written as nearest + weighted differences.

    The difference form returns a constant field bit-exactly.
    """
    if isinstance(values, ad.Tensor):
        base = ad.gather_rows(values, idx[:, 0])
        if idx.shape[1] == 1:
            return base
        diff = ad.sub(ad.gather_rows(values, idx[:, 1:]), ad.reshape(base, (len(idx), 1, -1)))
        k = idx.shape[1]
        if isinstance(w, ad.Tensor):
            # dropping column 0 with a 0/1 selection matrix is exact
            wt = ad.matmul(w, ad.Tensor(np.eye(k, dtype=w.dtype)[:, 1:]))
            wt = ad.reshape(wt, (len(idx), k - 1, 1))
        else:
            wt = ad.Tensor(w[:, 1:, None].astype(values.dtype))
        return ad.add(base, ad.reduce_sum(ad.mul(diff, wt), axis=1))
    base = values[idx[:, 0]]
    if idx.shape[1] == 1:
        return base.copy()
    diff = values[idx[:, 1:]] - base[:, None, :]
    return base + (w[:, 1:, None] * diff).sum(axis=1)


def upsample_flow(coarse_pc, coarse_sf, fine_pc, k=3):
    """Inverse-distance-weighted transfer of a coarse flow onto a finer cloud."""
    if len(coarse_pc) == 0:
        raise ArgumentError("upsample: coarse cloud is empty")
    if len(coarse_sf) != len(coarse_pc):
        raise ShapeError("upsample: coarse flow does not match coarse cloud")
    idx, w = idw_weights(coarse_pc, fine_pc, k)
    return SceneFlow(interpolate_rows(coarse_sf.vectors, idx, w), coarse_sf.direction)
