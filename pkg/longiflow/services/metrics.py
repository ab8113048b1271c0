"""损失与评估指标"""
from typing import Sequence, Tuple

import numpy as np
from scipy.stats import rankdata

from ..utils.errors import DataError
from ..utils.functional import binary_cross_entropy_with_logits
from ..utils.tensor import Tensor

DECISION_THRESHOLD = 0.5


def bce_loss(logit: Tensor, label: int) -> Tensor:
    """log-sigmoid 形式的二分类交叉熵，d/dlogit = sigmoid(logit) - label"""
    return binary_cross_entropy_with_logits(logit, float(label))


def auc(scores: Sequence[float], labels: Sequence[int]) -> float:
    """Mann-Whitney 统计量：P(正 > 负) + ½·P(平局)

    用平均秩处理平局，与两两比较的结果完全一致。
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(int)
    if scores.shape != labels.shape:
        raise DataError(f"auc: {scores.shape[0]} scores but {labels.shape[0]} labels")
    n_pos = int((labels == 1).sum())
    n_neg = int((labels == 0).sum())
    if n_pos == 0 or n_neg == 0:
        raise DataError("auc needs both classes present")
    ranks = rankdata(scores, method="average")
    u_statistic = ranks[labels == 1].sum() - n_pos * (n_pos + 1) / 2.0
    return float(u_statistic / (n_pos * n_neg))


def confusion(scores: Sequence[float], labels: Sequence[int],
              threshold: float = DECISION_THRESHOLD) -> Tuple[int, int, int, int]:
    """(tp, fp, tn, fn)，score >= threshold 判为阳性"""
    predicted = np.asarray(scores, dtype=np.float64) >= threshold
    truth = np.asarray(labels).astype(int) == 1
    tp = int((predicted & truth).sum())
    fp = int((predicted & ~truth).sum())
    tn = int((~predicted & ~truth).sum())
    fn = int((~predicted & truth).sum())
    return tp, fp, tn, fn


def accuracy(scores: Sequence[float], labels: Sequence[int], threshold: float = DECISION_THRESHOLD) -> float:
    tp, fp, tn, fn = confusion(scores, labels, threshold)
    total = tp + fp + tn + fn
    return (tp + tn) / total if total else 0.0
