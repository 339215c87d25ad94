import itertools

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from fastpci import autodiff as ad
from fastpci.errors import ArgumentError, CapacityError
from fastpci.metrics import (
    EMD_EXACT_MAX, auction_assignment, chamfer, emd, emd_approx, emd_exact, linear_assignment,
)


def brute_chamfer(X, Y):
    a = sum(min(np.linalg.norm(x - y) for y in Y) for x in X) / len(X)
    b = sum(min(np.linalg.norm(x - y) for x in X) for y in Y) / len(Y)
    return a + b


def brute_emd(X, Y):
    n = len(X)
    cost = np.linalg.norm(X[:, None] - Y[None], axis=-1)
    return min(cost[np.arange(n), list(p)].mean() for p in itertools.permutations(range(n)))


def test_chamfer_self_is_zero():
    X = np.random.default_rng(0).random((50, 3))
    assert chamfer(X, X) == 0.0


def test_chamfer_singleton_offset_is_two():
    assert chamfer(np.array([[0.0, 0, 0]]), np.array([[1.0, 0, 0]])) == 2.0


def test_chamfer_matches_brute_force_20_pairs():
    rng = np.random.default_rng(1)
    for _ in range(20):
        X, Y = rng.random((128, 3)), rng.random((128, 3))
        assert abs(chamfer(X, Y) - brute_chamfer(X, Y)) <= 1e-9


def test_chamfer_unequal_sizes_and_errors():
    rng = np.random.default_rng(2)
    X, Y = rng.random((7, 3)), rng.random((19, 3))
    assert abs(chamfer(X, Y) - brute_chamfer(X, Y)) <= 1e-12
    with pytest.raises(ArgumentError):
        chamfer(np.zeros((0, 3)), Y)


def test_chamfer_gradient_is_argmin_subgradient(f64):
    rng = np.random.default_rng(3)
    X = ad.Tensor(rng.random((10, 3)), requires_grad=True)
    Y = ad.Tensor(rng.random((12, 3)))
    assert ad.grad_check(lambda X: chamfer(X, Y), X, eps=1e-7) <= 1e-5
    assert float(chamfer(X, Y).data) == pytest.approx(chamfer(X.data, Y.data), abs=1e-14)


def test_emd_exact_matches_enumeration():
    rng = np.random.default_rng(4)
    for n in range(1, 9):
        for _ in range(3):
            X, Y = rng.random((n, 3)), rng.random((n, 3))
            assert emd_exact(X, Y).total_cost == pytest.approx(brute_emd(X, Y), abs=1e-12)


def test_emd_exact_is_a_bijection_matching_scipy():
    rng = np.random.default_rng(5)
    for n in (10, 50, 200):
        X, Y = rng.random((n, 3)), rng.random((n, 3))
        res = emd_exact(X, Y)
        assert sorted(res.mapping) == list(range(n))
        cost = np.linalg.norm(X[:, None] - Y[None], axis=-1)
        r, c = linear_sum_assignment(cost)
        assert res.total_cost == pytest.approx(cost[r, c].mean(), abs=1e-12)


def test_linear_assignment_known_matrix():
    cost = np.array([[4.0, 1, 3], [2, 0, 5], [3, 2, 2]])
    m = linear_assignment(cost)
    assert cost[np.arange(3), m].sum() == 5.0


def test_emd_exact_capacity_guard():
    X = np.zeros((EMD_EXACT_MAX + 1, 3))
    with pytest.raises(CapacityError):
        emd_exact(X, X)


def test_emd_size_mismatch():
    with pytest.raises(ArgumentError):
        emd_exact(np.zeros((3, 3)), np.zeros((4, 3)))


def test_emd_approx_within_one_percent_50_pairs():
    rng = np.random.default_rng(6)
    for _ in range(50):
        n = int(rng.integers(4, 65))
        X, Y = rng.random((n, 3)), rng.random((n, 3))
        exact = emd_exact(X, Y).total_cost
        assert abs(emd_approx(X, Y) - exact) <= 0.01 * exact


def test_auction_returns_permutation():
    rng = np.random.default_rng(7)
    X, Y = rng.random((30, 3)), rng.random((30, 3))
    assert sorted(auction_assignment(X, Y)) == list(range(30))


def test_emd_dispatches_to_approx_above_capacity():
    rng = np.random.default_rng(8)
    X = rng.random((EMD_EXACT_MAX + 8, 3))
    Y = X + 0.01
    assert emd(X, Y) == pytest.approx(0.01 * np.sqrt(3), rel=1e-6)


def test_emd_identical_sets_is_zero():
    X = np.random.default_rng(9).random((40, 3))
    assert emd(X, X[::-1].copy()) == 0.0
