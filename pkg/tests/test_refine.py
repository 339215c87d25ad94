import numpy as np
import pytest

from fastpci import autodiff as ad
from fastpci.errors import ArgumentError, ShapeError
from fastpci.refine import FusionNet, PointTransformerBlock, RefineNet, anchor_split, fuse, refine


def small_refine(rng, in_dim=5):
    return RefineNet(in_dim, (4, 5, 6), 4, 4, rng)


def test_zero_head_refine_is_identity():
    rng = np.random.default_rng(0)
    X = ad.Tensor(rng.random((64, 3)))
    out = refine(X, ad.Tensor(rng.random((64, 5))), small_refine(rng))
    np.testing.assert_array_equal(out.data, X.data)


def test_refine_disabled_returns_input():
    rng = np.random.default_rng(1)
    X = ad.Tensor(rng.random((16, 3)))
    assert refine(X, ad.Tensor(rng.random((16, 5))), small_refine(rng), enabled=False) is X
    assert refine(X, None, None) is X


def test_refine_feature_rows_must_match():
    rng = np.random.default_rng(2)
    with pytest.raises(ShapeError):
        refine(ad.Tensor(rng.random((16, 3))), ad.Tensor(rng.random((15, 5))), small_refine(rng))


def test_refine_gradient_l64(f64):
    rng = np.random.default_rng(3)
    net = small_refine(rng)
    for p in net.head.parameters():
        p.data[...] = rng.standard_normal(p.shape) * 0.3
    X = ad.Tensor(rng.random((64, 3)), requires_grad=True)
    feats = ad.Tensor(rng.standard_normal((64, 5)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((64, 3)))
    loss = lambda: ad.reduce_sum(ad.mul(refine(X, feats, net), w))  # noqa: E731
    err = ad.grad_check_params(loss, [X, feats] + net.parameters(), eps=1e-6, per_param=3)
    assert err <= 1e-4


def test_point_transformer_block_gradient(f64):
    rng = np.random.default_rng(4)
    block = PointTransformerBlock(4, 5, rng)
    x = ad.Tensor(rng.standard_normal((12, 4)), requires_grad=True)
    pos = ad.Tensor(rng.random((12, 3)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((12, 4)))
    loss = lambda: ad.reduce_sum(ad.mul(block(x, pos), w))  # noqa: E731
    assert ad.grad_check_params(loss, [x, pos] + block.parameters(), eps=1e-6) <= 1e-5


def test_anchor_split():
    assert anchor_split(100, 0.5) == 50
    assert anchor_split(100, 0.25) == 75
    assert anchor_split(1024, 0.75) == 256
    assert anchor_split(3, 0.5) == 2  # half rounds up


def test_fuse_split_size_and_weights():
    rng = np.random.default_rng(5)
    a, b = ad.Tensor(rng.random((100, 3))), ad.Tensor(rng.random((100, 3)))
    res = fuse(a, b, 0.5, 8, FusionNet(8, rng), np.random.default_rng(0))
    assert res.points.shape == (100, 3)
    assert res.n_forward == 50
    assert np.sum(res.anchors < 100) == 50 and np.sum(res.anchors >= 100) == 50
    assert np.all(np.abs(res.weights.data.sum(axis=1) - 1) <= 1e-5)


def test_fuse_output_is_convex_combination_of_neighbours():
    rng = np.random.default_rng(6)
    a, b = ad.Tensor(rng.random((60, 3))), ad.Tensor(rng.random((60, 3)))
    res = fuse(a, b, 0.3, 6, FusionNet(8, rng), np.random.default_rng(1))
    union = np.concatenate([a.data, b.data])
    cand = union[res.neighbors]
    assert np.all(cand.min(axis=1) <= res.points.data + 1e-12)
    assert np.all(res.points.data <= cand.max(axis=1) + 1e-12)


def test_fuse_identical_estimates_with_nearest_weights_stay_in_set():
    rng = np.random.default_rng(7)
    X = rng.random((40, 3))
    res = fuse(ad.Tensor(X), ad.Tensor(X.copy()), 0.5, 4, FusionNet(8, rng), rng, nearest=True)
    d = np.sqrt(((res.points.data[:, None] - X[None]) ** 2).sum(-1)).min(axis=1)
    assert np.all(d <= 1e-6)


def test_fuse_errors():
    rng = np.random.default_rng(8)
    a = ad.Tensor(rng.random((4, 3)))
    with pytest.raises(ArgumentError):
        fuse(a, a, 0.5, 9, FusionNet(4, rng), rng)


def test_fuse_gradient(f64):
    rng = np.random.default_rng(9)
    net = FusionNet(6, rng)
    a = ad.Tensor(rng.random((10, 3)), requires_grad=True)
    b = ad.Tensor(rng.random((10, 3)), requires_grad=True)
    w = ad.Tensor(rng.standard_normal((10, 3)))
    loss = lambda: ad.reduce_sum(ad.mul(fuse(a, b, 0.4, 5, net, np.random.default_rng(3)).points, w))  # noqa: E731
    assert ad.grad_check_params(loss, [a, b] + net.parameters(), eps=1e-6) <= 1e-4
