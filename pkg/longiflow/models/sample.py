"""训练样本数据模型"""
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .scan import PairKind


@dataclass
class PairSample:
    """已加载到内存的一条配对"""
    sample_id: str                          # 当前扫描ID
    subject_id: str
    label: int
    current: np.ndarray                     # [D,H,W]
    pair_kind: PairKind = PairKind.SINGLE_EMPTY
    flow: Optional[np.ndarray] = None       # [3,D,H,W]，已按年归一化
    prior: Optional[np.ndarray] = None      # [D,H,W]，prior_image 模式使用
    t_curr: float = 0.0
    t_prior: Optional[float] = None
