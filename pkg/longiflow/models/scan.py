"""扫描与配对数据模型"""
from dataclasses import dataclass, asdict
from enum import Enum
from typing import Any, Dict, Optional


class PairKind(Enum):
    """配对类型"""
    MULTI = "multi"                    # D_m：存在目标间隔的先前扫描
    SINGLE_SCALED = "single_scaled"    # D_s：间隔在窗口内，流场按间隔缩放
    SINGLE_EMPTY = "single_empty"      # D_s：无先前扫描，流场留空


@dataclass
class ScanRecord:
    """单次扫描"""
    subject_id: str                 # 受试者ID
    t: float                        # 采集时间（年）
    volume_path: str                # 体数据路径（相对清单目录）
    label: int                      # 1=阳性(AD类比) 0=阴性(NC类比)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        return asdict(self)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'ScanRecord':
        """从字典创建扫描记录"""
        return cls(subject_id=str(data['subject_id']), t=float(data['t']),
                   volume_path=str(data['volume_path']), label=int(data['label']))

    @property
    def scan_id(self) -> str:
        return f"{self.subject_id}@{self.t:g}"


@dataclass
class PairRecord:
    """当前扫描 + 可选先前扫描"""
    current: ScanRecord
    pair_kind: PairKind
    prior: Optional[ScanRecord] = None
    flow_path: Optional[str] = None

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典（配对索引的一条）"""
        return {
            'sample_id': self.sample_id,
            'subject_id': self.current.subject_id,
            'label': self.current.label,
            'pair_kind': self.pair_kind.value,
            'current': self.current.to_dict(),
            'prior': self.prior.to_dict() if self.prior else None,
            'flow_path': self.flow_path,
        }

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'PairRecord':
        """从配对索引条目创建"""
        prior = data.get('prior')
        return cls(
            current=ScanRecord.from_dict(data['current']),
            pair_kind=PairKind(data['pair_kind']),
            prior=ScanRecord.from_dict(prior) if prior else None,
            flow_path=data.get('flow_path'),
        )

    @property
    def sample_id(self) -> str:
        return self.current.scan_id

    @property
    def gap_years(self) -> Optional[float]:
        if self.prior is None:
            return None
        return self.current.t - self.prior.t

    def has_prior(self) -> bool:
        return self.prior is not None

    def needs_flow(self) -> bool:
        """multi 与 single_scaled 需要预计算流场"""
        return self.pair_kind != PairKind.SINGLE_EMPTY
