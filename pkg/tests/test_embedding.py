import numpy as np
import pytest

from longiflow.models.model_config import BackboneKind, EmbeddingConfig, EmbeddingMode
from longiflow.services.embedding_module import (
    Backbone, EmbeddingModule, positional_encoding, support_position_encoding,
)
from longiflow.services.gradcheck_suite import toy_embedding_config
from longiflow.utils.errors import ShapeError, UsageError
from longiflow.utils.tensor import Tensor

SIZE = 16


def module(mode=EmbeddingMode.FLOW, seed=0, **overrides):
    config = toy_embedding_config(mode)
    for key, value in overrides.items():
        setattr(config, key, value)
    return EmbeddingModule(config, np.random.default_rng(seed))


class TestConfig:
    def test_full_scale_preset_maps_to_seven_cubed(self):
        assert Backbone.output_shape(EmbeddingConfig.full_scale_preset()) == (1024, 7, 7, 7)

    def test_small_preset_shape(self):
        config = EmbeddingConfig(input_size=32, stage_channels=[4, 8, 16], downsample_factor_total=8,
                                 support_channels=64)
        assert Backbone.output_shape(config) == (64, 4, 4, 4)
        assert config.support_size == 4

    @pytest.mark.parametrize("kwargs", [
        {"input_size": 30},
        {"downsample_factor_total": 4},
        {"support_channels": 0},
    ])
    def test_invalid(self, kwargs):
        with pytest.raises(UsageError):
            EmbeddingConfig(**{"input_size": 32, "stage_channels": [4, 8, 16], "downsample_factor_total": 8,
                               **kwargs})


class TestAdapters:
    def test_zero_input_gives_bias_only(self, rng):
        m = module()
        m.adapter_image.bias.data = rng.normal(size=m.adapter_image.bias.shape)
        out = m.adapt_image(np.zeros((SIZE,) * 3))
        assert out.shape == (2, SIZE, SIZE, SIZE)
        np.testing.assert_array_equal(out.data, np.broadcast_to(m.adapter_image.bias.data[:, None, None, None],
                                                                out.shape))

    def test_flow_adapter_keeps_spatial_size(self, rng):
        assert module().adapt_flow(rng.normal(size=(3,) + (SIZE,) * 3)).shape == (2, SIZE, SIZE, SIZE)

    def test_wrong_channel_count(self, rng):
        with pytest.raises(ShapeError):
            module().adapt_flow(rng.normal(size=(2,) + (SIZE,) * 3))


class TestEmbedPair:
    def test_channels_and_grid(self, rng):
        features = module().embed_pair(rng.normal(size=(SIZE,) * 3), rng.normal(size=(3,) + (SIZE,) * 3))
        assert features.values.shape == (12, 4, 4, 4)
        assert features.position_encoding.shape == (12, 4, 4, 4)
        assert not features.flow_was_absent

    def test_missing_flow_is_the_replicated_vector(self, rng):
        m = module()
        m.missing_flow.data = rng.normal(size=6)
        first = m.embed_pair(rng.normal(size=(SIZE,) * 3), None)
        second = m.embed_pair(rng.normal(size=(SIZE,) * 3), None)
        assert first.flow_was_absent
        expected = np.broadcast_to(m.missing_flow.data[:, None, None, None], (6, 4, 4, 4))
        np.testing.assert_array_equal(first.values.data[6:], expected)
        np.testing.assert_array_equal(first.values.data[6:], second.values.data[6:])

    def test_missing_flow_receives_gradient(self, rng):
        m = module()
        m.embed_pair(rng.normal(size=(SIZE,) * 3), None).values.sum().backward()
        np.testing.assert_allclose(m.missing_flow.grad, np.full(6, 64.0))

    def test_single_image_mode_ignores_flow(self, rng, sample_factory):
        m = module(EmbeddingMode.SINGLE_IMAGE)
        sample = sample_factory(with_flow=True)
        features = m(sample)
        assert features.flow_was_absent
        assert not np.any(features.values.data[6:])
        assert "missing_flow" not in m.trainable_parameters()
        assert not hasattr(m, "adapter_flow")

    def test_branches_share_the_backbone(self, rng):
        m = module()
        # 让流场适配器在第 0 个通道上复刻图像适配器
        m.adapter_flow.weight.data[...] = 0.0
        m.adapter_flow.weight.data[:, 0] = m.adapter_image.weight.data[:, 0]
        m.adapter_flow.bias.data = m.adapter_image.bias.data.copy()
        image = rng.normal(size=(SIZE,) * 3)
        flow = np.zeros((3,) + (SIZE,) * 3)
        flow[0] = image
        values = m.embed_pair(image, flow).values.data
        np.testing.assert_allclose(values[:6], values[6:], atol=1e-12)
        assert m.shared_parameter_names()
        assert sum(name.startswith("backbone.") for name, _ in m.named_parameters()) == \
            len(m.shared_parameter_names())

    def test_residual_backbone(self, rng):
        m = module(backbone_kind=BackboneKind.RESIDUAL)
        assert m.embed_pair(rng.normal(size=(SIZE,) * 3)).values.shape == (12, 4, 4, 4)

    def test_wrong_input_size(self, rng):
        with pytest.raises(ShapeError, match="spatial shape"):
            module().embed_pair(rng.normal(size=(8, 8, 8)))


class TestPriorImage:
    def test_identical_images_differ_by_temporal_rows(self, rng):
        m = module(EmbeddingMode.PRIOR_IMAGE)
        image = rng.normal(size=(SIZE,) * 3)
        values = m.embed_with_prior(image, image.copy(), 1.0, 0.0).values.data
        assert values.shape == (12, 4, 4, 4)
        delta = (m.temporal.data[0] - m.temporal.data[1])[:, None, None, None]
        np.testing.assert_allclose(values[:6] - values[6:], np.broadcast_to(delta, (6, 4, 4, 4)), atol=1e-12)

    def test_both_temporal_rows_get_gradient(self, rng):
        m = module(EmbeddingMode.PRIOR_IMAGE)
        m.embed_with_prior(rng.normal(size=(SIZE,) * 3), rng.normal(size=(SIZE,) * 3)).values.sum().backward()
        assert np.all(m.temporal.grad != 0)

    def test_missing_prior_uses_missing_vector(self, rng):
        m = module(EmbeddingMode.PRIOR_IMAGE)
        values = m.embed_with_prior(rng.normal(size=(SIZE,) * 3), None).values.data
        expected = (m.missing_flow.data + m.temporal.data[1])[:, None, None, None]
        np.testing.assert_allclose(values[6:], np.broadcast_to(expected, (6, 4, 4, 4)), atol=1e-12)

    def test_flow_mode_has_no_temporal_rows(self, rng):
        with pytest.raises(ShapeError):
            module().embed_with_prior(rng.normal(size=(SIZE,) * 3), None)


class TestPositionalEncoding:
    def test_layout(self):
        pe = positional_encoding((4, 4, 4), 12)
        d = np.arange(4.0)[:, None, None]
        np.testing.assert_allclose(pe[0], np.broadcast_to(np.sin(d), (4, 4, 4)))
        np.testing.assert_allclose(pe[2], np.broadcast_to(np.cos(d), (4, 4, 4)))
        np.testing.assert_allclose(pe[4], np.broadcast_to(np.sin(np.arange(4.0))[None, :, None], (4, 4, 4)))

    def test_bounded_and_injective(self):
        pe = positional_encoding((3, 3, 3), 12)
        assert np.abs(pe).max() <= 1.0
        vectors = pe.reshape(12, -1).T
        assert len({tuple(np.round(v, 12)) for v in vectors}) == 27

    def test_deterministic(self):
        np.testing.assert_array_equal(positional_encoding((2, 3, 4), 18), positional_encoding((2, 3, 4), 18))

    def test_channel_remainder_is_zero(self):
        pe = support_position_encoding((2, 2, 2), 14)
        np.testing.assert_array_equal(pe[:12], positional_encoding((2, 2, 2), 12))
        assert not np.any(pe[12:])

    def test_needs_multiple_of_six(self):
        with pytest.raises(ShapeError):
            positional_encoding((2, 2, 2), 8)

    def test_features_encoded_adds_table(self, rng):
        features = module().embed_pair(rng.normal(size=(SIZE,) * 3))
        np.testing.assert_allclose(features.encoded().data - features.values.data, features.position_encoding,
                                   atol=1e-12)
