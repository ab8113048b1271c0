import numpy as np
import pytest

from longiflow.services.gradcheck_suite import (
    GRADCHECK_CASES, GradCheckOutcome, raise_on_failure, run_gradcheck_suite,
)
from longiflow.utils.errors import GradientCheckError, UsageError
from longiflow.utils.gradcheck import GradCheckResult, check_gradients, grad_check
from longiflow.utils.tensor import Tensor, _result


def wrong_square(x: Tensor) -> Tensor:
    """前向 x²，反向故意写成 3x"""
    data = x.data
    return _result(data ** 2, (x,), lambda g: (g * 3.0 * data,), "wrong_square")


class TestGradCheck:
    def test_sum_of_squares_is_exact(self, rng):
        x = Tensor(rng.normal(size=(2, 5)), requires_grad=True)
        assert grad_check(lambda t: (t * t).sum(), [x]) < 1e-8

    def test_wrong_backward_is_reported(self, rng):
        x = Tensor(rng.normal(size=4) + 2.0, requires_grad=True)
        with pytest.raises(GradientCheckError, match="input 0"):
            grad_check(lambda t: wrong_square(t).sum(), [x], threshold=1e-3)

    @pytest.mark.parametrize("eps", [1e-7, 1e-2])
    def test_eps_out_of_range(self, eps):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(UsageError, match="eps"):
            check_gradients(lambda t: t.sum(), [x], eps=eps)

    def test_needs_scalar_output(self):
        x = Tensor(np.ones(2), requires_grad=True)
        with pytest.raises(UsageError):
            check_gradients(lambda t: t * 2.0, [x])

    def test_max_elements_limits_work(self, rng):
        x = Tensor(rng.normal(size=(10, 10)), requires_grad=True)
        result = check_gradients(lambda t: (t * t).sum(), [x], max_elements=7)
        assert result.elements_checked == 7

    def test_input_data_is_restored(self, rng):
        data = rng.normal(size=5)
        x = Tensor(data.copy(), requires_grad=True)
        check_gradients(lambda t: t.tanh().sum(), [x])
        np.testing.assert_array_equal(x.data, data)


class TestGradCheckSuite:
    def test_case_names_are_unique(self):
        names = [case.name for case in GRADCHECK_CASES]
        assert len(names) == len(set(names))
        assert "end_to_end_bce" in names

    def test_selected_primitives_pass(self):
        outcomes = run_gradcheck_suite(names=["tensor_ops", "linear", "softmax", "layer_norm", "bce_loss"])
        assert [o.name for o in outcomes] == ["tensor_ops", "linear", "softmax", "layer_norm", "bce_loss"]
        assert all(o.passed for o in outcomes)
        raise_on_failure(outcomes)

    def test_unknown_check_name(self):
        with pytest.raises(UsageError, match="bogus"):
            run_gradcheck_suite(names=["bogus"])

    def test_failure_is_raised(self):
        bad = GradCheckOutcome("fake", 1e-4, GradCheckResult(0.5, 0, (1,), 1.0, 0.5, 3))
        good = GradCheckOutcome("ok", 1e-4, GradCheckResult(1e-9, 0, (0,), 1.0, 1.0, 3))
        with pytest.raises(GradientCheckError, match="1 of 2"):
            raise_on_failure([good, bad])
        assert bad.to_dict()["passed"] is False

    @pytest.mark.slow
    def test_full_suite_passes(self):
        outcomes = run_gradcheck_suite()
        failed = {o.name: o.result.max_relative_error for o in outcomes if not o.passed}
        assert not failed
