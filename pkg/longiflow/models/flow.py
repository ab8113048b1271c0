"""流场数据模型"""
from dataclasses import dataclass
from enum import Enum
from typing import Any, Dict, Optional

import numpy as np


class FlowMethod(Enum):
    """流场估计方法"""
    OPTICAL_FLOW = "optical_flow"    # Horn-Schunck 变分光流
    REGISTRATION = "registration"    # demons 形变配准


@dataclass
class FlowField:
    """3 通道体素位移场 [3,D,H,W]，分量顺序 (depth,height,width)"""
    vectors: np.ndarray
    method: FlowMethod
    source_gap_years: Optional[float] = None   # None 表示缺失（由可学习嵌入替代）
    subject_id: str = ""
    t_curr: Optional[float] = None
    t_prior: Optional[float] = None

    def __post_init__(self):
        """初始化后处理"""
        if isinstance(self.method, str):
            self.method = FlowMethod(self.method)

    @property
    def spatial_shape(self):
        return tuple(self.vectors.shape[1:])

    def is_normalized(self) -> bool:
        """是否已按年归一化"""
        return self.source_gap_years == 1.0

    def magnitude(self) -> np.ndarray:
        return np.sqrt((self.vectors.astype(np.float64) ** 2).sum(axis=0))

    def sidecar(self) -> Dict[str, Any]:
        """流场文件的 JSON 附属信息"""
        return {
            'dims': list(self.spatial_shape),
            'method': self.method.value,
            'source_gap_years': self.source_gap_years,
            'subject_id': self.subject_id,
            't_curr': self.t_curr,
            't_prior': self.t_prior,
        }
