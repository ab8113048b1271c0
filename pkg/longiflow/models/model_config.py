"""模型与训练配置"""
from dataclasses import dataclass, asdict, field
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

from ..utils.errors import UsageError
from ..utils.validators import Validators
from .flow import FlowMethod


class EmbeddingMode(Enum):
    """嵌入模式"""
    FLOW = "flow"                    # 当前图像 + 纵向流场
    PRIOR_IMAGE = "prior_image"      # 当前图像 + 先前图像 + 时间编码（消融）
    SINGLE_IMAGE = "single_image"    # 仅当前图像，流场分支恒为零（消融）


class BackboneKind(Enum):
    """骨干网络族"""
    DENSE = "dense"          # 稠密连接（拼接式增长）
    RESIDUAL = "residual"    # 残差块


def _raise_if_invalid(result: Tuple[bool, str]):
    is_valid, error_msg = result
    if not is_valid:
        raise UsageError(error_msg)


@dataclass
class EmbeddingConfig:
    """嵌入模块配置"""
    input_size: int = 32                                  # 输入立方体边长
    stage_channels: List[int] = field(default_factory=lambda: [4, 8, 16])
    downsample_factor_total: int = 8                      # 总下采样倍数 = 2^阶段数
    support_channels: int = 24                            # C_S
    mode: EmbeddingMode = EmbeddingMode.FLOW
    dense_layers: int = 1                                 # 每阶段稠密层数
    growth_rate: int = 4                                  # 每个稠密层新增通道
    backbone_kind: BackboneKind = BackboneKind.DENSE

    def __post_init__(self):
        """初始化后处理"""
        if isinstance(self.mode, str):
            self.mode = EmbeddingMode(self.mode)
        if isinstance(self.backbone_kind, str):
            self.backbone_kind = BackboneKind(self.backbone_kind)
        self.stage_channels = [int(c) for c in self.stage_channels]
        _raise_if_invalid(Validators.validate_embedding_config(
            self.input_size, self.stage_channels, self.downsample_factor_total, self.support_channels))

    @property
    def adapter_channels(self) -> int:
        """C0 取第一阶段宽度"""
        return self.stage_channels[0]

    @property
    def support_size(self) -> int:
        return self.input_size // self.downsample_factor_total

    @property
    def fused_channels(self) -> int:
        """F_S 通道数：图像与流场（或先前图像）两半拼接"""
        return 2 * self.support_channels

    @classmethod
    def full_scale_preset(cls) -> 'EmbeddingConfig':
        """全尺寸：224³ 输入、5 个阶段、7³ 支撑特征、1024 通道"""
        return cls(input_size=224, stage_channels=[64, 128, 256, 512, 1024], downsample_factor_total=32,
                   support_channels=1024, dense_layers=2, growth_rate=32)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        data = asdict(self)
        data['mode'] = self.mode.value
        data['backbone_kind'] = self.backbone_kind.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'EmbeddingConfig':
        return cls(**data)


@dataclass
class QueryingConfig:
    """查询模块配置"""
    num_blocks: int = 2                                   # L
    grid: Tuple[int, int, int] = (3, 3, 3)                # 参考点网格，乘积即 N_Q
    width: int = 32                                       # d
    heads: int = 4
    ffn_hidden: Optional[int] = None                      # 缺省为 4d
    offset_scale: float = 2.0                             # s
    per_head_offsets: bool = False
    use_querying: bool = True                             # False 时退化为全局池化基线
    init_std: float = 0.02                                # 初始查询的标准差

    def __post_init__(self):
        """初始化后处理"""
        self.grid = tuple(int(g) for g in self.grid)
        if self.ffn_hidden is None or self.ffn_hidden <= 0:
            self.ffn_hidden = 4 * self.width
        _raise_if_invalid(Validators.validate_querying_config(
            self.num_blocks, self.grid, self.width, self.heads, self.offset_scale))

    @property
    def num_queries(self) -> int:
        d, h, w = self.grid
        return d * h * w

    @classmethod
    def full_scale_preset(cls) -> 'QueryingConfig':
        """全尺寸：6 个查询块、125 个查询、宽度 512、8 头"""
        return cls(num_blocks=6, grid=(5, 5, 5), width=512, heads=8)

    @classmethod
    def for_query_count(cls, count: int, **kwargs) -> 'QueryingConfig':
        """查询数扫描用：27/64/125/343 对应 3³/4³/5³/7³"""
        edge = round(count ** (1.0 / 3.0))
        if edge ** 3 != count:
            raise UsageError(f"query count {count} is not a perfect cube")
        return cls(grid=(edge, edge, edge), **kwargs)

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        data = asdict(self)
        data['grid'] = list(self.grid)
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'QueryingConfig':
        return cls(**data)


@dataclass
class TrainConfig:
    """训练配置"""
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    epochs: int = 100
    batch_size: int = 8
    seed: int = 0
    mode: EmbeddingMode = EmbeddingMode.FLOW
    flow_method: FlowMethod = FlowMethod.OPTICAL_FLOW
    save_interval: int = 10                               # 每隔多少轮保存检查点
    dtype: str = "float32"
    zscore_inputs: bool = True                            # 输入体数据零均值单位方差
    per_subject: bool = False                             # 评估时按受试者平均得分
    train_fraction: float = 0.8

    def __post_init__(self):
        """初始化后处理"""
        if isinstance(self.mode, str):
            self.mode = EmbeddingMode(self.mode)
        if isinstance(self.flow_method, str):
            self.flow_method = FlowMethod(self.flow_method)
        _raise_if_invalid(Validators.validate_train_config(
            self.lr, self.batch_size, self.epochs, self.dtype, self.train_fraction))

    def to_dict(self) -> Dict[str, Any]:
        """转换为字典"""
        data = asdict(self)
        data['mode'] = self.mode.value
        data['flow_method'] = self.flow_method.value
        return data

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> 'TrainConfig':
        return cls(**data)


@dataclass
class FlowSettings:
    """流场预计算参数"""
    method: FlowMethod = FlowMethod.OPTICAL_FLOW
    hs_alpha: float = 1.0
    hs_iters: int = 500
    hs_intensity_scale: float = 255.0
    hs_presmooth_sigma: float = 1.0
    demons_iters: int = 50
    demons_smooth_sigma: float = 1.0

    def __post_init__(self):
        """初始化后处理"""
        if isinstance(self.method, str):
            try:
                self.method = FlowMethod(self.method)
            except ValueError:
                raise UsageError(f"unknown flow method {self.method!r}")
        _raise_if_invalid(Validators.validate_flow_settings(
            self.hs_alpha, self.hs_iters, self.demons_iters, self.demons_smooth_sigma,
            self.hs_intensity_scale, self.hs_presmooth_sigma))

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data['method'] = self.method.value
        return data


@dataclass
class PairingSettings:
    """D_m / D_s 配对窗口"""
    target_gap: float = 1.0
    dm_tolerance: float = 0.25
    ds_window: Tuple[float, float] = (0.25, 1.75)

    def __post_init__(self):
        self.ds_window = (float(self.ds_window[0]), float(self.ds_window[1]))
        _raise_if_invalid(Validators.validate_pairing(self.target_gap, self.dm_tolerance, self.ds_window))

    def to_dict(self) -> Dict[str, Any]:
        return {'target_gap': self.target_gap, 'dm_tolerance': self.dm_tolerance,
                'ds_window': list(self.ds_window)}


@dataclass
class PhantomSettings:
    """合成数据集参数"""
    subjects: int = 20
    size: int = 32
    timepoints: List[float] = field(default_factory=lambda: [0.0, 1.0])
    atrophy_rate: float = 0.1
    noise_std: float = 0.005
    seed: int = 0

    def __post_init__(self):
        self.timepoints = [float(t) for t in self.timepoints]
        _raise_if_invalid(Validators.validate_phantom_params(self.size, self.timepoints))
        if self.subjects < 2:
            raise UsageError(f"need at least 2 subjects, got {self.subjects}")
        if self.atrophy_rate < 0 or self.noise_std < 0:
            raise UsageError("atrophy_rate and noise_std must be non-negative")

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)
