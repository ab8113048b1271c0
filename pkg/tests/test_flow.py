import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from conftest import blob
from longiflow.models.flow import FlowField, FlowMethod
from longiflow.models.model_config import FlowSettings
from longiflow.services.flow_estimation import (
    FlowEstimator, FlowTrace, demons_register, horn_schunck_flow, scale_flow, warp,
)
from longiflow.utils.errors import DataError, ShapeError, UsageError

SHAPE = (20, 20, 20)
CENTER = (9.5, 9.5, 9.5)


def smooth_random(rng, shape=(12, 12, 12)):
    return gaussian_filter(rng.normal(size=shape), 2.0)


class TestHornSchunck:
    def test_identical_volumes_give_zero_flow(self, rng):
        volume = smooth_random(rng)
        flow = horn_schunck_flow(volume, volume, iters=20)
        assert flow.method == FlowMethod.OPTICAL_FLOW
        assert not np.any(flow.vectors)

    def test_recovers_depth_translation(self):
        prior = blob(SHAPE, CENTER, 2.5)
        current = blob(SHAPE, (CENTER[0] + 1.0, CENTER[1], CENTER[2]), 2.5)
        flow = horn_schunck_flow(prior, current, iters=400)
        support = prior > 0.1
        assert abs(flow.vectors[0][support].mean() - 1.0) < 0.25
        assert abs(flow.vectors[1][support].mean()) < 0.25
        assert abs(flow.vectors[2][support].mean()) < 0.25

    @pytest.mark.parametrize("seed", range(3))
    def test_energy_never_increases(self, seed):
        rng = np.random.default_rng(seed)
        trace = FlowTrace()
        horn_schunck_flow(smooth_random(rng), smooth_random(rng), iters=30, trace=trace)
        assert len(trace.values) == 31
        assert trace.is_non_increasing()
        assert trace.values[-1] < trace.values[0]

    def test_rejects_mismatched_shapes(self):
        with pytest.raises(ShapeError):
            horn_schunck_flow(np.zeros((4, 4, 4)), np.zeros((4, 4, 5)))

    def test_default_iterations_recover_translation_at_32(self):
        shape, center = (32, 32, 32), (15.5, 15.5, 15.5)
        prior = blob(shape, center, 4.0)
        current = blob(shape, (center[0] + 1.0, center[1], center[2]), 4.0)
        flow = horn_schunck_flow(prior, current)
        support = prior > 0.1
        assert abs(flow.vectors[0][support].mean() - 1.0) < 0.25
        assert abs(flow.vectors[1][support].mean()) < 0.1
        assert abs(flow.vectors[2][support].mean()) < 0.1

    @pytest.mark.parametrize("alpha", [0.0, -1.0])
    def test_rejects_non_positive_alpha(self, alpha):
        with pytest.raises(UsageError, match="alpha"):
            horn_schunck_flow(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)), alpha=alpha)

    def test_rejects_zero_iterations(self):
        with pytest.raises(UsageError, match="iters"):
            horn_schunck_flow(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)), iters=0)


class TestDemons:
    def test_identical_volumes_stay_near_zero(self):
        volume = blob(SHAPE, CENTER, 3.0)
        flow = demons_register(volume, volume)
        assert np.abs(flow.vectors).max() < 0.05

    def test_dilation_halves_mse(self):
        fixed = blob(SHAPE, CENTER, 3.0)
        moving = blob(SHAPE, CENTER, 3.3)
        flow = demons_register(fixed, moving)
        before = np.mean((moving - fixed) ** 2)
        after = np.mean((warp(moving, flow) - fixed) ** 2)
        assert flow.method == FlowMethod.REGISTRATION
        assert after < 0.5 * before

    def test_mse_never_increases(self, rng):
        trace = FlowTrace()
        demons_register(smooth_random(rng), smooth_random(rng), iters=15, trace=trace)
        assert len(trace.values) == 16
        assert trace.is_non_increasing(rtol=0.0)

    def test_rejects_negative_smoothing(self):
        with pytest.raises(UsageError, match="smooth_sigma"):
            demons_register(np.zeros((4, 4, 4)), np.zeros((4, 4, 4)), smooth_sigma=-0.5)


class TestScaleFlow:
    @staticmethod
    def field(value):
        return FlowField(vectors=np.full((3, 2, 2, 2), value, dtype=np.float32), method=FlowMethod.OPTICAL_FLOW)

    def test_unit_gap_leaves_field_unchanged(self):
        scaled = scale_flow(self.field(0.6), t_curr=3.0, t_prior=2.0)
        np.testing.assert_array_equal(scaled.vectors, self.field(0.6).vectors)
        assert scaled.is_normalized()

    def test_half_year_gap_doubles(self):
        scaled = scale_flow(self.field(0.6), t_curr=1.5, t_prior=1.0)
        np.testing.assert_allclose(scaled.vectors, 1.2, rtol=1e-6)
        assert scaled.source_gap_years == 1.0
        assert (scaled.t_curr, scaled.t_prior) == (1.5, 1.0)

    @pytest.mark.parametrize("t_prior", [1.0, 2.0])
    def test_non_positive_gap(self, t_prior):
        with pytest.raises(DataError, match="non-positive scan interval"):
            scale_flow(self.field(1.0), t_curr=1.0, t_prior=t_prior)

    def test_linear_in_the_field(self, rng):
        vectors = rng.normal(size=(3, 3, 3, 3)).astype(np.float32)
        base = scale_flow(FlowField(vectors, FlowMethod.REGISTRATION), 2.0, 0.5).vectors
        tripled = scale_flow(FlowField(3 * vectors, FlowMethod.REGISTRATION), 2.0, 0.5).vectors
        np.testing.assert_allclose(tripled, 3 * base, rtol=1e-5, atol=1e-6)


class TestWarp:
    def test_zero_flow_is_bit_exact_identity(self, rng):
        volume = rng.normal(size=(5, 6, 7))
        np.testing.assert_array_equal(warp(volume, np.zeros((3, 5, 6, 7))), volume)

    def test_constant_depth_flow_shifts_affine_volume(self):
        d, h, w = np.indices((6, 5, 4)).astype(np.float64)
        volume = 2.0 * d + 0.5 * h - w + 3.0
        flow = np.zeros((3, 6, 5, 4))
        flow[0] = 1.0
        out = warp(volume, flow)
        np.testing.assert_allclose(out[:-1], volume[1:], atol=1e-10)
        np.testing.assert_allclose(out[:-1], volume[:-1] + 2.0, atol=1e-10)

    def test_recovered_inverse_restores_volume(self):
        volume = blob(SHAPE, CENTER, 3.0)
        flow = np.zeros((3,) + SHAPE)
        flow[0], flow[1] = 0.5, -0.3
        warped = warp(volume, flow)
        inverse = horn_schunck_flow(warped, volume)
        restored = warp(warped, -inverse.vectors)
        before = np.mean((warped - volume) ** 2)
        assert np.mean((restored - volume) ** 2) < 0.25 * before
        assert np.mean((restored - volume) ** 2) < 0.02 * np.mean(volume ** 2)

    def test_shape_mismatch(self):
        with pytest.raises(ShapeError):
            warp(np.zeros((4, 4, 4)), np.zeros((3, 4, 4, 5)))


class TestFlowEstimator:
    @pytest.mark.parametrize("method", ["optical_flow", "registration"])
    def test_estimate_normalizes_per_year(self, method):
        volume = blob((12, 12, 12), (5.5, 5.5, 5.5), 2.0)
        estimator = FlowEstimator(FlowSettings(method=method, hs_iters=5, demons_iters=3))
        flow = estimator.estimate(volume, volume, t_prior=0.0, t_curr=2.0, subject_id="sub-001")
        assert flow.method == FlowMethod(method)
        assert flow.is_normalized()
        assert flow.subject_id == "sub-001"
        assert np.abs(flow.vectors).max() < 0.05

    def test_optical_flow_of_gap_half_is_double_raw(self):
        prior = blob(SHAPE, CENTER, 2.5)
        current = blob(SHAPE, (CENTER[0] + 0.5, CENTER[1], CENTER[2]), 2.5)
        estimator = FlowEstimator(FlowSettings(hs_iters=20))
        raw = estimator.raw_flow(prior, current)
        scaled = estimator.estimate(prior, current, t_prior=1.0, t_curr=1.5)
        np.testing.assert_allclose(scaled.vectors, 2.0 * raw.vectors, rtol=1e-6, atol=1e-7)

    def test_unknown_method(self):
        with pytest.raises(UsageError):
            FlowSettings(method="bspline")
