"""共享夹具：玩具尺寸的模型、样本与合成数据集"""
import json

import numpy as np
import pytest
from scipy.ndimage import gaussian_filter

from longiflow.models.model_config import EmbeddingMode
from longiflow.models.sample import PairSample
from longiflow.models.scan import PairKind
from longiflow.services.gradcheck_suite import toy_embedding_config, toy_querying_config
from longiflow.services.longitudinal_model import LongitudinalClassifier

TOY_SIZE = 16

# 与 toy_embedding_config / toy_querying_config 对应的配置文件内容
TOY_CONFIG = {
    "input_size": TOY_SIZE,
    "stage_channels": "2,4",
    "downsample_factor_total": 4,
    "support_channels": 6,
    "growth_rate": 2,
    "dense_layers": 1,
    "query_grid": "2,2,2",
    "query_width": 8,
    "heads": 2,
    "ffn_hidden": 16,
    "num_blocks": 1,
    "dtype": "float64",
    "batch_size": 4,
    "epochs": 1,
    "save_interval": 1,
    "phantom_size": TOY_SIZE,
    "hs_iters": 5,
    "demons_iters": 3,
}


@pytest.fixture
def rng():
    return np.random.default_rng(42)


def build_toy_model(mode: EmbeddingMode = EmbeddingMode.FLOW, seed: int = 0, **querying) -> LongitudinalClassifier:
    config = toy_querying_config()
    for key, value in querying.items():
        setattr(config, key, value)
    return LongitudinalClassifier(toy_embedding_config(mode), config, seed=seed, dtype=np.float64)


@pytest.fixture
def toy_model():
    return build_toy_model()


def make_sample(rng: np.random.Generator, label: int = 1, with_flow: bool = True,
                subject_id: str = "sub-000", t: float = 1.0) -> PairSample:
    current = gaussian_filter(rng.normal(size=(TOY_SIZE,) * 3), 1.0)
    flow = rng.normal(scale=0.3, size=(3,) + (TOY_SIZE,) * 3) if with_flow else None
    return PairSample(sample_id=f"{subject_id}@{t:g}", subject_id=subject_id, label=label, current=current,
                      pair_kind=PairKind.MULTI if with_flow else PairKind.SINGLE_EMPTY, flow=flow,
                      prior=current.copy() if with_flow else None, t_curr=t,
                      t_prior=t - 1.0 if with_flow else None)


@pytest.fixture
def sample_factory(rng):
    def factory(**kwargs) -> PairSample:
        return make_sample(rng, **kwargs)
    return factory


@pytest.fixture
def toy_config_file(tmp_path):
    path = tmp_path / "toy_config.json"
    path.write_text(json.dumps(TOY_CONFIG), encoding="utf-8")
    return path


def blob(shape, center, sigma) -> np.ndarray:
    """各向同性高斯团"""
    grid = np.indices(shape).astype(np.float64)
    sq = sum((grid[i] - center[i]) ** 2 for i in range(3))
    return np.exp(-sq / (2.0 * sigma ** 2))
