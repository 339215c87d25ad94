import numpy as np
import pytest

from fastpci import autodiff as ad
from fastpci.errors import ShapeError
from fastpci.msformer import (
    DUAL_CROSS, SELF_ATTENTION, MSBlock, attention_map, coordinate_map, motion_head, structure_head,
)


def test_closed_form_attention_example(f64):
    # q k^T / sqrt(2) = [[0, ln 3], [0, 0]]
    s = np.sqrt(2.0)
    q = ad.Tensor(np.array([[np.log(3.0) * s, 0.0], [0.0, 0.0]]))
    k = ad.Tensor(np.array([[0.0, 1.0], [1.0, 0.0]]))
    A = attention_map(q, k).data
    np.testing.assert_allclose(A, [[0.25, 0.75], [0.5, 0.5]], atol=1e-15)


def test_motion_head_cyclic_shift(f64):
    rng = np.random.default_rng(0)
    b1 = rng.standard_normal((3, 3))
    A = np.roll(np.eye(3), 1, axis=1)  # row i selects i + 1
    M = motion_head(ad.Tensor(A), ad.Tensor(b1), ad.Tensor(np.eye(3))).data
    np.testing.assert_allclose(M, b1[(np.arange(3) + 1) % 3] - b1, atol=1e-15)


def test_identity_attention_gives_exactly_zero_motion(f64):
    rng = np.random.default_rng(1)
    L = 16
    b1 = ad.Tensor(coordinate_map(L) @ rng.standard_normal((3, 8)))
    M = motion_head(ad.Tensor(np.eye(L)), b1, ad.Tensor(rng.standard_normal((8, 8)))).data
    assert np.all(M == 0.0)


def test_block_zero_motion_for_identity_attention(f64):
    # far-apart one-hot features with a huge query/key gain make A the identity
    rng = np.random.default_rng(2)
    L, C = 6, 8
    block = MSBlock(C, 6, rng)
    block.wq.data[:] = 0.0
    block.wk.data[:] = 0.0
    block.wq.data[:6, :6] = 200.0 * np.eye(6)
    block.wk.data[:6, :6] = 200.0 * np.eye(6)
    F = np.zeros((L, C))
    F[np.arange(L), np.arange(L)] = 10.0
    out = block(ad.Tensor(F), ad.Tensor(F.copy()))
    np.testing.assert_array_equal(out.A.data, np.stack([np.eye(L)] * 2))
    assert np.all(out.M.data == 0.0)


def test_coordinate_map():
    np.testing.assert_array_equal(coordinate_map(3), [[0, 0, 0], [0.5, 0.5, 0.5], [1, 1, 1]])
    np.testing.assert_array_equal(coordinate_map(1), [[0, 0, 0]])


def test_attention_rows_normalised_over_100_forwards():
    rng = np.random.default_rng(3)
    for trial in range(100):
        L = int(rng.integers(1, 40))
        block = MSBlock(8, 4, rng, structure_branch=bool(trial % 2))
        F0 = ad.Tensor(rng.standard_normal((L, 8)) * rng.uniform(0.1, 20))
        F1 = ad.Tensor(rng.standard_normal((L, 8)))
        mode = DUAL_CROSS if trial % 3 else SELF_ATTENTION
        A = block(F0, F1, mode).A.data
        assert np.all(np.abs(A.sum(axis=-1) - 1.0) <= 1e-5)


def test_dual_direction_pairs_queries_with_reversed_frame(f64):
    rng = np.random.default_rng(4)
    block = MSBlock(5, 4, rng)
    F0, F1 = ad.Tensor(rng.standard_normal((7, 5))), ad.Tensor(rng.standard_normal((7, 5)))
    _, _, _, A = block.attend(F0, F1, DUAL_CROSS)
    n0, n1 = block.norm(F0).data, block.norm(F1).data
    q = n0 @ block.wq.data
    k = n1 @ block.wk.data
    logits = q @ k.T / 2.0
    ref = np.exp(logits - logits.max(1, keepdims=True))
    np.testing.assert_allclose(A.data[0], ref / ref.sum(1, keepdims=True), atol=1e-12)
    _, _, _, As = block.attend(F0, F1, SELF_ATTENTION)
    k0 = n0 @ block.wk.data
    logits = q @ k0.T / 2.0
    ref = np.exp(logits - logits.max(1, keepdims=True))
    np.testing.assert_allclose(As.data[0], ref / ref.sum(1, keepdims=True), atol=1e-12)


def test_structure_branch_off_passes_features_through(f64):
    rng = np.random.default_rng(5)
    block = MSBlock(6, 4, rng, structure_branch=False)
    F0, F1 = ad.Tensor(rng.standard_normal((5, 6))), ad.Tensor(rng.standard_normal((5, 6)))
    out = block(F0, F1)
    assert out.F_next[0] is F0 and out.F_next[1] is F1
    np.testing.assert_array_equal(out.S.data[0], F0.data)
    assert block.structure_dim == 6


def test_block_gradients(f64):
    rng = np.random.default_rng(6)
    block = MSBlock(4, 3, rng)
    F0 = ad.Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    F1 = ad.Tensor(rng.standard_normal((5, 4)), requires_grad=True)
    w = [ad.Tensor(rng.standard_normal(s)) for s in [(2, 5, 3), (2, 5, 3), (5, 4), (5, 4)]]

    def loss():
        out = block(F0, F1)
        parts = [out.S, out.M, out.F_next[0], out.F_next[1]]
        return ad.reduce_sum(ad.concat([ad.reshape(ad.mul(p, wi), (-1,)) for p, wi in zip(parts, w)]))

    err = ad.grad_check_params(loss, [F0, F1] + block.parameters(), eps=1e-6)
    assert err <= 1e-4


def test_shape_errors():
    with pytest.raises(ShapeError):
        attention_map(ad.Tensor(np.zeros((2, 3))), ad.Tensor(np.zeros((2, 4))))
    with pytest.raises(ShapeError):
        structure_head(ad.Tensor(np.eye(2)), ad.Tensor(np.zeros((3, 2))), ad.Tensor(np.eye(2)))
    block = MSBlock(4, 3, np.random.default_rng(0))
    with pytest.raises(ShapeError):
        block(ad.Tensor(np.zeros((3, 5))), ad.Tensor(np.zeros((3, 5))))
