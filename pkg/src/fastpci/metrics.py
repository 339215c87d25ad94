"""Chamfer distance and Earth Mover's distance between point sets.

Chamfer uses unsquared Euclidean distances and is differentiable when either
input is an autodiff tensor (gradient follows the selected nearest point).
EMD is a metric only: an exact Hungarian solver for N <= 1024 and an
epsilon-scaling auction for larger clouds.
"""
from __future__ import annotations

from dataclasses import dataclass

import numba
import numpy as np

from . import autodiff as ad
from .errors import ArgumentError, CapacityError
from .kernels import PointCloud, _knn_kernel, sq_distances

EMD_EXACT_MAX = 1024
AUCTION_SCALE = 1e7
_BLOCK = 512


@dataclass
class Assignment:
    mapping: np.ndarray
    total_cost: float


def _as_array(x):
    if isinstance(x, PointCloud):
        return x.points
    if isinstance(x, ad.Tensor):
        return x.data
    return np.asarray(x)


def nearest_indices(query, ref):
    """Index of the nearest ``ref`` point for each query point (lowest index on ties)."""
    dtype = np.result_type(query.dtype, ref.dtype)
    idx, _ = _knn_kernel(np.ascontiguousarray(query, dtype=dtype), np.ascontiguousarray(ref, dtype=dtype), 1)
    return idx[:, 0]


def chamfer(X, Y):
    """Symmetric mean nearest-neighbour distance (sum of both directions).

    Returns a float for array inputs and a scalar tensor if either side is a tensor.
    """
    xa, ya = _as_array(X), _as_array(Y)
    if len(xa) == 0 or len(ya) == 0:
        raise ArgumentError("chamfer: empty point cloud")
    xi = nearest_indices(xa, ya)
    yi = nearest_indices(ya, xa)
    if isinstance(X, ad.Tensor) or isinstance(Y, ad.Tensor):
        xt = X if isinstance(X, ad.Tensor) else ad.Tensor(xa)
        yt = Y if isinstance(Y, ad.Tensor) else ad.Tensor(ya)
        d_xy = ad.l2norm_rows(ad.sub(xt, ad.gather_rows(yt, xi)))
        d_yx = ad.l2norm_rows(ad.sub(yt, ad.gather_rows(xt, yi)))
        return ad.add(ad.reduce_mean(d_xy), ad.reduce_mean(d_yx))
    d_xy = np.sqrt(np.square(xa - ya[xi]).sum(axis=1))
    d_yx = np.sqrt(np.square(ya - xa[yi]).sum(axis=1))
    return float(d_xy.mean() + d_yx.mean())


def cost_matrix(X, Y):
    xa, ya = _as_array(X), _as_array(Y)
    return np.sqrt(sq_distances(xa.astype(np.float64), ya.astype(np.float64)))


@numba.njit(cache=True)
def _hungarian(cost):
    # shortest augmenting path with row/column potentials, O(n^3)
    n = cost.shape[0]
    u = np.zeros(n + 1)
    v = np.zeros(n + 1)
    p = np.zeros(n + 1, dtype=np.int64)
    way = np.zeros(n + 1, dtype=np.int64)
    minv = np.empty(n + 1)
    used = np.empty(n + 1, dtype=np.bool_)
    for i in range(1, n + 1):
        p[0] = i
        j0 = 0
        minv[:] = np.inf
        used[:] = False
        while True:
            used[j0] = True
            i0 = p[j0]
            delta = np.inf
            j1 = 0
            for j in range(1, n + 1):
                if not used[j]:
                    cur = cost[i0 - 1, j - 1] - u[i0] - v[j]
                    if cur < minv[j]:
                        minv[j] = cur
                        way[j] = j0
                    if minv[j] < delta:
                        delta = minv[j]
                        j1 = j
            for j in range(n + 1):
                if used[j]:
                    u[p[j]] += delta
                    v[j] -= delta
                else:
                    minv[j] -= delta
            j0 = j1
            if p[j0] == 0:
                break
        while True:
            j1 = way[j0]
            p[j0] = p[j1]
            j0 = j1
            if j0 == 0:
                break
    mapping = np.empty(n, dtype=np.int64)
    for j in range(1, n + 1):
        mapping[p[j] - 1] = j - 1
    return mapping


def linear_assignment(cost):
    """Minimum-cost perfect matching of a square cost matrix (row -> column)."""
    cost = np.ascontiguousarray(cost, dtype=np.float64)
    if cost.ndim != 2 or cost.shape[0] != cost.shape[1]:
        raise ArgumentError(f"assignment needs a square cost matrix, got {cost.shape}")
    return _hungarian(cost)


def _check_pair(xa, ya):
    if len(xa) != len(ya):
        raise ArgumentError(f"EMD needs equal sizes, got {len(xa)} and {len(ya)}")
    if len(xa) == 0:
        raise ArgumentError("EMD: empty point cloud")


def emd_exact(X, Y):
    """Optimal bijection by the Hungarian algorithm; ``total_cost`` is the mean distance."""
    xa, ya = _as_array(X), _as_array(Y)
    _check_pair(xa, ya)
    if len(xa) > EMD_EXACT_MAX:
        raise CapacityError(f"emd_exact limited to N <= {EMD_EXACT_MAX}, got {len(xa)}")
    cost = cost_matrix(xa, ya)
    mapping = linear_assignment(cost)
    return Assignment(mapping, float(cost[np.arange(len(xa)), mapping].mean()))


@numba.njit(cache=True)
def _int_cost(x, y, i, j, scale):
    d0 = x[i, 0] - y[j, 0]
    d1 = x[i, 1] - y[j, 1]
    d2 = x[i, 2] - y[j, 2]
    return np.int64(np.floor(np.sqrt(d0 * d0 + d1 * d1 + d2 * d2) * scale + 0.5))


@numba.njit(cache=True)
def _auction(x, y, eps_list, scale):
    # forward Gauss-Seidel auction on integer costs, prices kept across epsilon phases
    n = x.shape[0]
    prices = np.zeros(n, dtype=np.int64)
    owner = np.empty(n, dtype=np.int64)
    assigned = np.empty(n, dtype=np.int64)
    queue = np.empty(n, dtype=np.int64)
    for eps in eps_list:
        owner[:] = -1
        assigned[:] = -1
        for i in range(n):
            queue[i] = i
        head = 0
        count = n
        while count > 0:
            i = queue[head]
            head = (head + 1) % n
            count -= 1
            best_j = -1
            best = np.iinfo(np.int64).min
            second = np.iinfo(np.int64).min
            for j in range(n):
                val = -_int_cost(x, y, i, j, scale) - prices[j]
                if val > best:
                    second = best
                    best = val
                    best_j = j
                elif val > second:
                    second = val
            if n == 1:
                second = best
            prices[best_j] += best - second + eps
            prev = owner[best_j]
            owner[best_j] = i
            assigned[i] = best_j
            if prev >= 0:
                assigned[prev] = -1
                queue[(head + count) % n] = prev
                count += 1
    return assigned


def default_epsilon_schedule(X, Y, factor=5.0):
    """Geometric epsilon ladder (meters) ending at ``1e-4 * diameter / N``."""
    xa, ya = _as_array(X), _as_array(Y)
    union = np.concatenate([xa, ya]).astype(np.float64)
    diam = 0.0
    for s in range(0, len(union), _BLOCK):
        diam = max(diam, float(np.sqrt(sq_distances(union[s:s + _BLOCK], union).max())))
    n = len(xa)
    final = max(1e-4 * diam / n, 1.0 / AUCTION_SCALE)
    sched = [final]
    while sched[-1] < diam / 4:
        sched.append(sched[-1] * factor)
    return sched[::-1]


def auction_assignment(X, Y, epsilon_schedule=None):
    xa = np.ascontiguousarray(_as_array(X), dtype=np.float64)
    ya = np.ascontiguousarray(_as_array(Y), dtype=np.float64)
    _check_pair(xa, ya)
    if epsilon_schedule is None:
        epsilon_schedule = default_epsilon_schedule(xa, ya)
    eps = np.array([max(1, int(round(e * AUCTION_SCALE))) for e in epsilon_schedule], dtype=np.int64)
    return _auction(xa, ya, eps, AUCTION_SCALE)


def emd_approx(X, Y, epsilon_schedule=None):
    """Mean matched distance of an epsilon-scaling auction assignment."""
    xa, ya = _as_array(X), _as_array(Y)
    mapping = auction_assignment(xa, ya, epsilon_schedule)
    d = np.sqrt(np.square(xa.astype(np.float64) - ya.astype(np.float64)[mapping]).sum(axis=1))
    return float(d.mean())


def emd(X, Y):
    """Exact EMD up to :data:`EMD_EXACT_MAX` points, auction beyond."""
    if len(_as_array(X)) <= EMD_EXACT_MAX:
        return emd_exact(X, Y).total_cost
    return emd_approx(X, Y)
