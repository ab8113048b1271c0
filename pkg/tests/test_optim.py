import numpy as np
import pytest

from longiflow.utils.errors import NumericalError
from longiflow.utils.optim import AdamOptimizer, AdamState, adam_step
from longiflow.utils.tensor import Tensor


def reference_adam(w, grad_fn, steps, lr, beta1=0.9, beta2=0.999, eps=1e-8):
    """逐标量的 Adam 参考实现"""
    m = v = 0.0
    for t in range(1, steps + 1):
        g = grad_fn(w)
        m = beta1 * m + (1 - beta1) * g
        v = beta2 * v + (1 - beta2) * g * g
        w = w - lr * (m / (1 - beta1 ** t)) / (np.sqrt(v / (1 - beta2 ** t)) + eps)
    return w


class TestAdamStep:
    def test_first_step_moves_by_lr_times_sign(self):
        param = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
        grad = np.array([0.5, -0.1, 2.0])
        adam_step({"w": param}, {"w": grad}, AdamState(lr=0.01))
        np.testing.assert_allclose(param.data - np.array([1.0, -2.0, 3.0]), -0.01 * np.sign(grad), rtol=1e-6)

    def test_two_steps_on_square_match_reference(self):
        param = Tensor(np.array([1.0]), requires_grad=True)
        state = AdamState(lr=0.1)
        for _ in range(2):
            adam_step({"w": param}, {"w": 2.0 * param.data}, state)
        np.testing.assert_allclose(param.data[0], reference_adam(1.0, lambda w: 2.0 * w, 2, 0.1), atol=1e-12)
        assert state.step_count == 2

    def test_non_finite_gradient_leaves_parameters_untouched(self):
        param = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        state = AdamState()
        with pytest.raises(NumericalError, match="w"):
            adam_step({"w": param}, {"w": np.array([np.nan, 1.0])}, state)
        np.testing.assert_array_equal(param.data, [1.0, 2.0])
        assert state.step_count == 0

    def test_zero_learning_rate_is_a_no_op(self, rng):
        data = rng.normal(size=(3, 3))
        param = Tensor(data.copy(), requires_grad=True)
        adam_step({"w": param}, {"w": rng.normal(size=(3, 3))}, AdamState(lr=0.0))
        np.testing.assert_array_equal(param.data, data)


class TestAdamOptimizer:
    def test_minimizes_quadratic(self):
        w = Tensor(np.array([3.0, -2.0]), requires_grad=True)
        optimizer = AdamOptimizer({"w": w}, lr=0.1)
        for _ in range(300):
            optimizer.zero_grad()
            (w * w).sum().backward()
            optimizer.step()
        assert np.abs(w.data).max() < 0.05

    def test_state_arrays_round_trip(self):
        w = Tensor(np.array([1.0, 2.0]), requires_grad=True)
        optimizer = AdamOptimizer({"w": w}, lr=0.1)
        (w * w).sum().backward()
        optimizer.step()
        arrays = optimizer.state.to_arrays()
        assert set(arrays) == {"adam.step_count", "adam.m.w", "adam.v.w"}
        restored = AdamState(lr=0.1)
        restored.load_arrays(arrays)
        assert restored.step_count == 1
        np.testing.assert_array_equal(restored.first_moment["w"], optimizer.state.first_moment["w"])
