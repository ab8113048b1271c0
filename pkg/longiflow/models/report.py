"""评估报告与命令结果"""
from dataclasses import dataclass, asdict, field
from typing import Any, Dict, List, Optional


@dataclass
class SampleScore:
    """单个样本的预测"""
    sample_id: str
    score: float
    label: int

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


@dataclass
class EvalReport:
    """评估报告"""
    accuracy: float
    auc: Optional[float]
    per_sample: List[SampleScore] = field(default_factory=list)
    true_positive: int = 0
    false_positive: int = 0
    true_negative: int = 0
    false_negative: int = 0
    per_subject: bool = False

    @property
    def sample_count(self) -> int:
        return self.true_positive + self.false_positive + self.true_negative + self.false_negative

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return {
            'accuracy': self.accuracy,
            'auc': self.auc,
            'per_subject': self.per_subject,
            'confusion': {
                'true_positive': self.true_positive,
                'false_positive': self.false_positive,
                'true_negative': self.true_negative,
                'false_negative': self.false_negative,
            },
            'per_sample': [s.to_dict() for s in self.per_sample],
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EvalReport':
        confusion = data.get('confusion', {})
        return cls(
            accuracy=data['accuracy'],
            auc=data.get('auc'),
            per_sample=[SampleScore(**s) for s in data.get('per_sample', [])],
            per_subject=data.get('per_subject', False),
            **confusion,
        )


@dataclass
class CommandResult:
    """命令执行结果：0 成功，1 用法错误，2 数据错误，3 数值失败"""
    exit_code: int = 0
    artifacts_written: List[str] = field(default_factory=list)
    error_kind: Optional[str] = None
    message: str = ""

    def is_success(self) -> bool:
        return self.exit_code == 0

    def error_line(self) -> str:
        """一行可机读的错误描述"""
        text = " ".join(self.message.split())
        return f"error code={self.exit_code} kind={self.error_kind} message={text}"

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
