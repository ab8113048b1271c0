"""嵌入模块

图像与流场分别经过通道适配卷积后送入同一个骨干网络（权重共享），两路输出在通道维拼接为
支撑特征 F_S；流场缺失时流场一路换成可学习向量在空间上复制。prior_image 模式下两幅图像
共用图像适配器，并各自加上一行时间编码。
"""
from typing import List, Optional, Tuple, Union

import numpy as np

from ..models.features import SupportFeatures
from ..models.model_config import BackboneKind, EmbeddingConfig, EmbeddingMode
from ..models.sample import PairSample
from ..utils.errors import ShapeError
from ..utils.layers import Conv3d, Module, ModuleList, parameter
from ..utils.logger import logger
from ..utils.tensor import Tensor, concat

ArrayLike = Union[np.ndarray, Tensor]


def positional_encoding(shape: Tuple[int, int, int], channels: int) -> np.ndarray:
    """三维正弦位置编码 [channels,D,H,W]

    每个轴占 channels/3 个通道，其中前一半为 sin、后一半为 cos，频率 1/10000^(k/F)，
    F = channels/6，位置取整数体素下标。
    """
    if channels < 6 or channels % 6 != 0:
        raise ShapeError(f"positional encoding needs channels divisible by 6, got {channels}")
    freqs_per_axis = channels // 6
    freqs = 1.0 / (10000.0 ** (np.arange(freqs_per_axis, dtype=np.float64) / freqs_per_axis))
    blocks = []
    for axis, extent in enumerate(shape):
        pos = np.arange(extent, dtype=np.float64)
        angles = freqs[:, None] * pos[None, :]                      # [F, extent]
        for table in (np.sin(angles), np.cos(angles)):
            view = [1, 1, 1, 1]
            view[0], view[axis + 1] = freqs_per_axis, extent
            blocks.append(np.broadcast_to(table.reshape(view), (freqs_per_axis,) + tuple(shape)))
    return np.concatenate(blocks, axis=0)


def support_position_encoding(shape: Tuple[int, int, int], channels: int) -> np.ndarray:
    """F_S 的位置编码：编码最大的 6 的倍数个通道，其余通道为零"""
    usable = (channels // 6) * 6
    out = np.zeros((channels,) + tuple(shape), dtype=np.float64)
    if usable:
        out[:usable] = positional_encoding(shape, usable)
    return out


def _as_volume(x: ArrayLike, channels: int, dtype) -> Tensor:
    """(D,H,W) 或 (C,D,H,W) -> Tensor[C,D,H,W]"""
    if isinstance(x, Tensor):
        t = x
    else:
        t = Tensor(np.asarray(x, dtype=dtype))
    if t.ndim == 3 and channels == 1:
        t = t.reshape((1,) + t.shape)
    if t.ndim != 4 or t.shape[0] != channels:
        raise ShapeError(f"expected a {channels}-channel volume, got shape {t.shape}")
    return t


class DenseBlock(Module):
    """稠密块：每层 relu(conv3³) 的输出与输入在通道维拼接"""

    def __init__(self, cin: int, layers: int, growth: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.layers = ModuleList()
        channels = cin
        for _ in range(layers):
            self.layers.append(Conv3d(channels, growth, 3, rng, padding=1, dtype=dtype))
            channels += growth
        self.out_channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        for conv in self.layers:
            x = concat([x, conv(x).relu()], axis=0)
        return x


class ResidualBlock(Module):
    """x + relu(conv(relu(conv(x))))"""

    def __init__(self, channels: int, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.conv1 = Conv3d(channels, channels, 3, rng, padding=1, dtype=dtype)
        self.conv2 = Conv3d(channels, channels, 3, rng, padding=1, dtype=dtype)
        self.out_channels = channels

    def __call__(self, x: Tensor) -> Tensor:
        return x + self.conv2(self.conv1(x).relu()).relu()


class Backbone(Module):
    """共享骨干：每个阶段一个块 + 步长 2 的 2³ 卷积下采样，最后 1³ 卷积投影到 C_S"""

    def __init__(self, config: EmbeddingConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.config = config
        self.blocks = ModuleList()
        self.transitions = ModuleList()
        channels = config.adapter_channels
        for width in config.stage_channels:
            if config.backbone_kind == BackboneKind.DENSE:
                block = DenseBlock(channels, config.dense_layers, config.growth_rate, rng, dtype)
            else:
                block = ModuleList([ResidualBlock(channels, rng, dtype) for _ in range(config.dense_layers)])
            self.blocks.append(block)
            out = block.out_channels if isinstance(block, DenseBlock) else channels
            self.transitions.append(Conv3d(out, width, 2, rng, stride=2, dtype=dtype))
            channels = width
        self.projection = Conv3d(channels, config.support_channels, 1, rng, dtype=dtype)

    def __call__(self, x: Tensor) -> Tensor:
        expected = (self.config.input_size,) * 3
        if tuple(x.shape[1:]) != expected:
            raise ShapeError(f"backbone expects spatial size {expected}, got {tuple(x.shape[1:])}")
        if x.shape[0] != self.config.adapter_channels:
            raise ShapeError(f"backbone expects {self.config.adapter_channels} channels, got {x.shape[0]}")
        for block, transition in zip(self.blocks, self.transitions):
            if isinstance(block, ModuleList):
                for residual in block:
                    x = residual(x)
            else:
                x = block(x)
            x = transition(x).relu()
        return self.projection(x)

    @staticmethod
    def output_shape(config: EmbeddingConfig) -> Tuple[int, int, int, int]:
        """按卷积尺寸公式推出输出形状，不实例化网络"""
        extent = config.input_size
        for _ in config.stage_channels:
            extent = (extent - 2) // 2 + 1
        return (config.support_channels, extent, extent, extent)


class EmbeddingModule(Module):
    """适配器 + 共享骨干 + 缺失流场向量（+ 时间编码）"""

    def __init__(self, config: EmbeddingConfig, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        self.config = config
        self.dtype = np.dtype(dtype)
        c0, cs = config.adapter_channels, config.support_channels
        self.adapter_image = Conv3d(1, c0, 3, rng, padding=1, dtype=dtype)
        if config.mode == EmbeddingMode.FLOW:
            self.adapter_flow = Conv3d(3, c0, 3, rng, padding=1, dtype=dtype)
        self.backbone = Backbone(config, rng, dtype)
        # single_image 模式下缺失向量冻结为零
        self.missing_flow = parameter(np.zeros(cs), dtype, trainable=config.mode != EmbeddingMode.SINGLE_IMAGE)
        if config.mode == EmbeddingMode.PRIOR_IMAGE:
            self.temporal = parameter(rng.normal(0.0, 0.02, size=(2, cs)), dtype)
        s = config.support_size
        self._position = support_position_encoding((s, s, s), config.fused_channels).astype(self.dtype)
        logger.debug(f"嵌入模块: 模式={config.mode.value} 骨干={config.backbone_kind.value} "
                     f"参数量={self.parameter_count()}")

    @property
    def support_grid(self) -> Tuple[int, int, int]:
        s = self.config.support_size
        return (s, s, s)

    def adapt_image(self, image: ArrayLike) -> Tensor:
        """f_a1：单通道图像 -> C0 通道"""
        return self.adapter_image(_as_volume(image, 1, self.dtype))

    def adapt_flow(self, flow: ArrayLike) -> Tensor:
        """f_a2：三通道流场 -> C0 通道"""
        if not hasattr(self, "adapter_flow"):
            raise ShapeError(f"embedding mode {self.config.mode.value} has no flow adapter")
        return self.adapter_flow(_as_volume(flow, 3, self.dtype))

    def backbone_forward(self, adapted: Tensor) -> Tensor:
        return self.backbone(adapted)

    def _replicated_missing(self) -> Tensor:
        cs = self.config.support_channels
        return self.missing_flow.reshape(cs, 1, 1, 1).expand((cs,) + self.support_grid)

    def _check_volume(self, volume: ArrayLike, what: str):
        shape = tuple(volume.shape[-3:])
        expected = (self.config.input_size,) * 3
        if shape != expected:
            raise ShapeError(f"{what} has spatial shape {shape}, config expects {expected}")

    def embed_pair(self, current: ArrayLike, flow: Optional[ArrayLike] = None) -> SupportFeatures:
        """F_S = [backbone(f_a1(I)) ; backbone(f_a2(flow)) 或复制的缺失向量]"""
        self._check_volume(current, "current image")
        image_half = self.backbone_forward(self.adapt_image(current))
        absent = flow is None or self.config.mode == EmbeddingMode.SINGLE_IMAGE
        if absent:
            flow_half = self._replicated_missing()
        else:
            self._check_volume(flow, "flow")
            flow_half = self.backbone_forward(self.adapt_flow(flow))
        values = concat([image_half, flow_half], axis=0)
        return SupportFeatures(values=values, position_encoding=self._position, flow_was_absent=absent)

    def embed_with_prior(self, current: ArrayLike, prior: Optional[ArrayLike],
                         t_curr: float = 0.0, t_prior: Optional[float] = None) -> SupportFeatures:
        """消融：两幅图像共用 f_a1 与骨干，分别加时间编码第 0/1 行后拼接

        先前扫描缺失时，先前一路为复制的缺失向量加第 1 行。
        """
        if not hasattr(self, "temporal"):
            raise ShapeError(f"embedding mode {self.config.mode.value} has no temporal encoding")
        self._check_volume(current, "current image")
        cs = self.config.support_channels
        current_half = self.backbone_forward(self.adapt_image(current)) + self.temporal[0].reshape(cs, 1, 1, 1)
        if prior is None:
            prior_half = self._replicated_missing() + self.temporal[1].reshape(cs, 1, 1, 1)
        else:
            self._check_volume(prior, "prior image")
            prior_half = self.backbone_forward(self.adapt_image(prior)) + self.temporal[1].reshape(cs, 1, 1, 1)
        values = concat([current_half, prior_half], axis=0)
        return SupportFeatures(values=values, position_encoding=self._position, flow_was_absent=prior is None)

    def __call__(self, sample: PairSample) -> SupportFeatures:
        if self.config.mode == EmbeddingMode.PRIOR_IMAGE:
            return self.embed_with_prior(sample.current, sample.prior, sample.t_curr, sample.t_prior)
        if self.config.mode == EmbeddingMode.SINGLE_IMAGE:
            return self.embed_pair(sample.current, None)
        return self.embed_pair(sample.current, sample.flow)

    def shared_parameter_names(self) -> List[str]:
        return [name for name, _ in self.backbone.named_parameters("backbone.")]
