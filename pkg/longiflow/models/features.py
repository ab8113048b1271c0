"""特征数据模型"""
from dataclasses import dataclass

import numpy as np

from ..utils.tensor import Tensor


@dataclass
class SupportFeatures:
    """支撑特征 F_S [C,D_S,H_S,W_S] 及其位置编码"""
    values: Tensor
    position_encoding: np.ndarray
    flow_was_absent: bool = False

    @property
    def channels(self) -> int:
        return self.values.shape[0]

    @property
    def grid_shape(self):
        return tuple(self.values.shape[1:])

    def encoded(self) -> Tensor:
        """加上位置编码后的注意力输入"""
        return self.values + self.position_encoding.astype(self.values.dtype, copy=False)


@dataclass
class QueryState:
    """查询特征 F_Q [N_Q,d]"""
    F_Q: Tensor

    @property
    def num_queries(self) -> int:
        return self.F_Q.shape[0]

    def first_query(self) -> Tensor:
        """分类只读取第一个查询"""
        return self.F_Q[0:1]
