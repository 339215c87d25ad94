import numpy as np
import pytest

from fastpci import autodiff as ad
from fastpci.errors import NumericError, ShapeError
from fastpci.optim import Adam, AdamHyper, AdamState, adam_step, lr_at


def test_zero_grads_no_decay_leave_params_unchanged():
    p = [np.array([1.0, -2.0]), np.ones((2, 2))]
    before = [x.copy() for x in p]
    state = AdamState()
    for _ in range(3):
        adam_step(p, [np.zeros(2), np.zeros((2, 2))], state, AdamHyper(lr=0.1))
    for a, b in zip(p, before):
        np.testing.assert_array_equal(a, b)


def test_first_step_magnitude_is_lr():
    p = [np.array([3.0])]
    adam_step(p, [np.array([1.0])], AdamState(), AdamHyper(lr=1e-3, eps=0.0))
    assert p[0][0] == pytest.approx(3.0 - 1e-3, abs=1e-15)


def test_descent_on_square():
    x = ad.Tensor(np.array([1.0]), requires_grad=True)
    opt = Adam([x], lr=0.05)
    prev = float(x.data[0] ** 2)
    for _ in range(10):
        opt.zero_grad()
        ad.backward(ad.reduce_sum(ad.square(x)))
        opt.step()
        cur = float(x.data[0] ** 2)
        assert cur < prev
        prev = cur


def test_decoupled_weight_decay():
    p = [np.array([2.0])]
    adam_step(p, [np.array([0.0])], AdamState(), AdamHyper(lr=0.1, weight_decay=0.5))
    assert p[0][0] == pytest.approx(2.0 - 0.1 * 0.5 * 2.0, abs=1e-15)


def test_state_shape_mismatch_and_strict_nan():
    state = AdamState()
    adam_step([np.zeros(2)], [np.zeros(2)], state, AdamHyper())
    with pytest.raises(ShapeError):
        adam_step([np.zeros(3)], [np.zeros(3)], state, AdamHyper())
    with ad.strict_mode():
        with pytest.raises(NumericError):
            adam_step([np.zeros(2)], [np.array([np.nan, 0])], AdamState(), AdamHyper())


def test_halving_schedule():
    assert lr_at(0, 1e-3, 80) == 1e-3
    assert lr_at(79, 1e-3, 80) == 1e-3
    assert lr_at(80, 1e-3, 80) == 5e-4
    assert lr_at(160, 1e-3, 80) == 2.5e-4
