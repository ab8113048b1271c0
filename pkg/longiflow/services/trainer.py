"""训练与评估服务"""
from collections import OrderedDict, defaultdict
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models.model_config import TrainConfig
from ..models.report import EvalReport, SampleScore
from ..models.sample import PairSample
from ..utils.data_storage import DataStorage
from ..utils.errors import DataError, NumericalError
from ..utils.logger import logger
from ..utils.optim import AdamOptimizer
from ..utils.tensor import _stable_sigmoid, no_grad
from .longitudinal_model import LongitudinalClassifier
from .metrics import auc, bce_loss, confusion
from .querying_module import AttentionTrace

FINAL_CHECKPOINT = "checkpoint.ckpt"


@dataclass
class TrainResult:
    """训练结果"""
    loss_history: List[float] = field(default_factory=list)
    checkpoints: List[str] = field(default_factory=list)
    steps: int = 0


def _parameter_norms(model: LongitudinalClassifier, limit: int = 8) -> Dict[str, float]:
    norms = {name: float(np.linalg.norm(p.data)) for name, p in model.named_parameters()}
    return dict(sorted(norms.items(), key=lambda kv: -kv[1] if np.isfinite(kv[1]) else float("-inf"))[:limit])


class Trainer:
    """小批量 Adam 训练"""

    def __init__(self, model: LongitudinalClassifier, config: TrainConfig, storage: Optional[DataStorage] = None):
        self.model = model
        self.config = config
        self.storage = storage
        self.optimizer = AdamOptimizer(model.trainable_parameters(), lr=config.lr, beta1=config.beta1,
                                       beta2=config.beta2, epsilon=config.epsilon)
        # 打乱顺序与参数初始化使用不同的随机流
        self._shuffle_rng = np.random.default_rng([config.seed, 1])

    def _check_samples(self, samples: Sequence[PairSample]):
        if not samples:
            raise DataError("training needs at least one pair")
        labels = {s.label for s in samples}
        if labels != {0, 1}:
            raise DataError(f"training pairs must contain both classes, got labels {sorted(labels)}")

    def batch_loss(self, batch: Sequence[PairSample]):
        """小批量平均 BCE"""
        total = None
        for sample in batch:
            loss = bce_loss(self.model(sample), sample.label)
            total = loss if total is None else total + loss
        return total * (1.0 / len(batch))

    def train_step(self, batch: Sequence[PairSample]) -> float:
        self.optimizer.zero_grad()
        try:
            loss = self.batch_loss(batch)
            loss.backward()
            self.optimizer.step()
        except NumericalError as e:
            ids = [s.sample_id for s in batch]
            norms = _parameter_norms(self.model)
            logger.error(f"训练出现非有限值: 批次 {ids}，参数范数 {norms}")
            raise NumericalError(f"non-finite value during training on batch {ids}: {e}; "
                                 f"largest parameter norms {norms}")
        return loss.item()

    def train(self, samples: Sequence[PairSample], check_classes: bool = True) -> TrainResult:
        """按种子打乱的小批量训练，记录每轮平均损失，按间隔保存检查点"""
        if check_classes:
            self._check_samples(samples)
        elif not samples:
            raise DataError("training needs at least one pair")
        cfg = self.config
        result = TrainResult()
        n = len(samples)
        for epoch in range(1, cfg.epochs + 1):
            order = self._shuffle_rng.permutation(n)
            epoch_total = 0.0
            for start in range(0, n, cfg.batch_size):
                batch = [samples[i] for i in order[start:start + cfg.batch_size]]
                epoch_total += self.train_step(batch) * len(batch)
                result.steps += 1
            mean_loss = epoch_total / n
            result.loss_history.append(mean_loss)
            logger.info(f"第 {epoch}/{cfg.epochs} 轮: 平均损失 {mean_loss:.6f}")
            if self.storage is not None and cfg.save_interval > 0 and epoch % cfg.save_interval == 0:
                result.checkpoints.append(str(self.save_checkpoint(f"checkpoints/epoch_{epoch:04d}.ckpt", epoch)))
        if self.storage is not None:
            result.checkpoints.append(str(self.save_checkpoint(FINAL_CHECKPOINT, cfg.epochs)))
        return result

    def checkpoint_arrays(self) -> "OrderedDict[str, np.ndarray]":
        arrays = self.model.state_dict()
        arrays.update(self.optimizer.state.to_arrays())
        return arrays

    def save_checkpoint(self, filename: str, epoch: int):
        meta = {
            "model": self.model.config_snapshot(),
            "train": self.config.to_dict(),
            "seed": self.config.seed,
            "epoch": epoch,
        }
        return self.storage.save_checkpoint(filename, self.checkpoint_arrays(), meta)


def load_model(storage: DataStorage, filename: str = FINAL_CHECKPOINT) -> Tuple[LongitudinalClassifier, Dict]:
    """从检查点重建模型"""
    arrays, meta = storage.load_checkpoint(filename)
    if "model" not in meta:
        raise DataError(f"checkpoint {storage.path(filename)} has no model snapshot")
    state = OrderedDict((k, v) for k, v in arrays.items() if not k.startswith("adam."))
    return LongitudinalClassifier.from_snapshot(meta["model"], state), meta


def score(model: LongitudinalClassifier, sample: PairSample, trace: Optional[AttentionTrace] = None) -> float:
    """sigmoid(logit)"""
    with no_grad():
        logit = model(sample, trace)
    return float(_stable_sigmoid(np.asarray(logit.item(), dtype=np.float64)))


def evaluate(model: LongitudinalClassifier, samples: Sequence[PairSample], per_subject: bool = False) -> EvalReport:
    """逐配对（或按受试者平均）评估：阈值 0.5 的准确率与 AUC"""
    if not samples:
        raise DataError("evaluation needs at least one pair")
    entries = [SampleScore(sample_id=s.sample_id, score=score(model, s), label=s.label) for s in samples]
    if per_subject:
        grouped: Dict[str, List[SampleScore]] = defaultdict(list)
        subject_of = {s.sample_id: s.subject_id for s in samples}
        for entry in entries:
            grouped[subject_of[entry.sample_id]].append(entry)
        entries = [SampleScore(sample_id=sid, score=float(np.mean([e.score for e in group])), label=group[0].label)
                   for sid, group in sorted(grouped.items())]

    scores = [e.score for e in entries]
    labels = [e.label for e in entries]
    tp, fp, tn, fn = confusion(scores, labels)
    if len(set(labels)) == 2:
        auc_value: Optional[float] = auc(scores, labels)
    else:
        auc_value = None
        logger.warning("评估集只有一个类别，AUC 无定义")
    report = EvalReport(accuracy=(tp + tn) / len(entries), auc=auc_value, per_sample=entries,
                        true_positive=tp, false_positive=fp, true_negative=tn, false_negative=fn,
                        per_subject=per_subject)
    logger.info(f"评估完成: {len(entries)} 个样本，准确率 {report.accuracy:.4f}，AUC {auc_value}")
    return report
