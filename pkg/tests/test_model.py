import numpy as np
import pytest

from conftest import build_toy_model
from longiflow.models.features import QueryState
from longiflow.models.model_config import EmbeddingMode
from longiflow.utils.errors import ShapeError
from longiflow.utils.tensor import Tensor


class TestClassify:
    def test_reads_only_the_first_query(self, toy_model, rng):
        f_q = rng.normal(size=(8, 8))
        base = toy_model.classify(QueryState(Tensor(f_q))).item()
        f_q[5] += 10.0
        f_q[1:] = rng.normal(size=(7, 8))
        assert toy_model.classify(QueryState(Tensor(f_q))).item() == base

    def test_zero_head_returns_bias(self, toy_model, sample_factory):
        toy_model.head.weight.data[...] = 0.0
        toy_model.head.bias.data[...] = 0.25
        assert toy_model(sample_factory()).item() == 0.25

    def test_empty_state(self, toy_model):
        with pytest.raises(ShapeError):
            toy_model.classify(QueryState(Tensor(np.zeros((0, 8)))))


class TestForward:
    def test_scalar_logit(self, toy_model, sample_factory):
        logit = toy_model(sample_factory())
        assert logit.shape == ()
        assert np.isfinite(logit.item())

    def test_same_seed_same_logit(self, sample_factory):
        sample = sample_factory()
        assert build_toy_model(seed=3)(sample).item() == build_toy_model(seed=3)(sample).item()

    def test_different_seed_different_logit(self, sample_factory):
        sample = sample_factory()
        assert build_toy_model(seed=3)(sample).item() != build_toy_model(seed=4)(sample).item()

    def test_trace_has_one_entry_per_block(self, sample_factory):
        model = build_toy_model(num_blocks=2)
        trace = model.new_trace()
        model(sample_factory(), trace)
        assert trace.support_grid == (4, 4, 4)
        assert len(trace.blocks) == 2
        assert trace.blocks[0]["points"].shape == (2, 8, 3)

    @pytest.mark.parametrize("mode", list(EmbeddingMode))
    def test_every_mode_runs(self, mode, sample_factory):
        assert np.isfinite(build_toy_model(mode)(sample_factory()).item())

    def test_backward_reaches_every_trainable_parameter(self, toy_model, sample_factory):
        toy_model(sample_factory()).backward()
        for name, param in toy_model.trainable_parameters().items():
            # 有流场时缺失向量不参与前向
            if name != "embedding.missing_flow":
                assert param.grad is not None, name
        assert toy_model.embedding.missing_flow.grad is None


class TestPooledBaseline:
    def test_no_querying_module(self, sample_factory):
        model = build_toy_model(use_querying=False)
        assert not model.uses_querying
        assert not hasattr(model, "querying")
        assert model.head.weight.shape == (12, 1)
        assert np.isfinite(model(sample_factory()).item())

    def test_pooled_logit_is_head_of_channel_means(self, sample_factory):
        model = build_toy_model(use_querying=False)
        sample = sample_factory()
        support = model.embedding(sample)
        pooled = support.values.data.mean(axis=(1, 2, 3))
        expected = pooled @ model.head.weight.data[:, 0] + model.head.bias.data[0]
        assert model(sample).item() == pytest.approx(expected, abs=1e-12)


class TestSnapshot:
    def test_round_trip_gives_identical_logits(self, sample_factory, rng):
        model = build_toy_model(seed=1)
        for _, param in model.named_parameters():
            param.data = param.data + rng.normal(0.0, 0.01, size=param.shape)
        sample = sample_factory()
        clone = type(model).from_snapshot(model.config_snapshot(), model.state_dict())
        assert clone(sample).item() == model(sample).item()

    def test_snapshot_contents(self, toy_model):
        snapshot = toy_model.config_snapshot()
        assert snapshot["dtype"] == "float64"
        assert snapshot["querying"]["grid"] == [2, 2, 2]
        assert snapshot["embedding"]["input_size"] == 16
