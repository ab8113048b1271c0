"""完整分类模型：嵌入模块 + 查询模块 + 第一个查询上的线性分类头"""
from collections import OrderedDict
from typing import Any, Dict, Optional

import numpy as np

from ..models.features import QueryState, SupportFeatures
from ..models.model_config import EmbeddingConfig, QueryingConfig
from ..models.sample import PairSample
from ..utils.errors import ShapeError
from ..utils.layers import Linear, Module
from ..utils.logger import logger
from ..utils.tensor import Tensor
from .embedding_module import EmbeddingModule
from .querying_module import AttentionTrace, QueryingModule


class LongitudinalClassifier(Module):
    """纵向分类模型

    use_querying=False 时跳过查询模块，F_S 全局平均池化后直接接线性头（骨干直连基线）。
    """

    def __init__(self, embedding_config: EmbeddingConfig, querying_config: QueryingConfig,
                 seed: int = 0, dtype=np.float64, zero_init_residual: bool = False):
        super().__init__()
        self.embedding_config = embedding_config
        self.querying_config = querying_config
        self.seed = int(seed)
        self.dtype = np.dtype(dtype)
        rng = np.random.default_rng(seed)
        support_channels = embedding_config.fused_channels
        self.embedding = EmbeddingModule(embedding_config, rng, dtype)
        if querying_config.use_querying:
            self.querying = QueryingModule(querying_config, support_channels, rng, dtype, zero_init_residual)
            self.head = Linear(querying_config.width, 1, rng, dtype)
        else:
            self.head = Linear(support_channels, 1, rng, dtype)
        logger.info(f"模型已构建: 参数量 {self.parameter_count()}，模式 {embedding_config.mode.value}，"
                    f"查询数 {querying_config.num_queries if querying_config.use_querying else 0}")

    @property
    def uses_querying(self) -> bool:
        return self.querying_config.use_querying

    def classify(self, state: QueryState) -> Tensor:
        """只读取第 0 个查询，返回标量 logit"""
        if state.num_queries < 1:
            raise ShapeError("classification needs at least one query")
        return self.head(state.first_query()).reshape(())

    def pooled_logit(self, support: SupportFeatures) -> Tensor:
        pooled = support.values.mean(axis=(1, 2, 3)).reshape(1, -1)
        return self.head(pooled).reshape(())

    def new_trace(self) -> AttentionTrace:
        s = self.embedding_config.support_size
        return AttentionTrace(support_grid=(s, s, s), offset_scale=self.querying_config.offset_scale)

    def __call__(self, sample: PairSample, trace: Optional[AttentionTrace] = None) -> Tensor:
        support = self.embedding(sample)
        if not self.uses_querying:
            return self.pooled_logit(support)
        return self.classify(self.querying(support, trace))

    def config_snapshot(self) -> Dict[str, Any]:
        return {
            "embedding": self.embedding_config.to_dict(),
            "querying": self.querying_config.to_dict(),
            "seed": self.seed,
            "dtype": self.dtype.name,
        }

    @classmethod
    def from_snapshot(cls, snapshot: Dict[str, Any], state: Optional["OrderedDict[str, np.ndarray]"] = None
                      ) -> "LongitudinalClassifier":
        """按检查点中的配置快照重建模型并载入参数"""
        model = cls(EmbeddingConfig.from_dict(snapshot["embedding"]),
                    QueryingConfig.from_dict(snapshot["querying"]),
                    seed=snapshot.get("seed", 0), dtype=snapshot.get("dtype", "float64"))
        if state is not None:
            model.load_state_dict(state)
        return model
