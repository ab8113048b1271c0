"""查询模块

L 个查询块依次更新 N_Q 个可学习查询。每个块是三个 pre-norm 残差子层：
自注意力、三维可变形交叉注意力、前馈网络，形式均为 x + Sublayer(LN(x))。
"""
from dataclasses import dataclass, field
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models.features import QueryState, SupportFeatures
from ..models.model_config import QueryingConfig
from ..utils.errors import NumericalError, ShapeError
from ..utils.functional import normalized_to_voxel, softmax, trilinear_sample
from ..utils.layers import LayerNorm, Linear, Module, ModuleList, parameter
from ..utils.logger import logger
from ..utils.tensor import Tensor, stack


def reference_grid(d: int, h: int, w: int) -> np.ndarray:
    """均匀参考点 P_Q [N,3]，depth 最外层；单点轴映射到 0"""
    if min(d, h, w) < 1:
        raise ShapeError(f"reference grid extents must be >= 1, got {(d, h, w)}")
    axes = [np.linspace(-1.0, 1.0, n) if n > 1 else np.zeros(1) for n in (d, h, w)]
    zz, yy, xx = np.meshgrid(*axes, indexing="ij")
    return np.stack([zz.ravel(), yy.ravel(), xx.ravel()], axis=1)


def offset_to_normalized(grid_shape: Sequence[int]) -> np.ndarray:
    """支撑网格体素单位 -> 归一化坐标的逐轴系数 2/(extent-1)"""
    return 2.0 / np.maximum(np.asarray(grid_shape, dtype=np.float64) - 1.0, 1.0)


def _split_heads(x: Tensor, heads: int) -> Tensor:
    """[N,d] -> [heads,N,d/heads]"""
    n, d = x.shape
    return x.reshape(n, heads, d // heads).transpose(1, 0, 2)


def _merge_heads(x: Tensor) -> Tensor:
    heads, n, dh = x.shape
    return x.transpose(1, 0, 2).reshape(n, heads * dh)


@dataclass
class AttentionTrace:
    """一次前向中各块交叉注意力的形变采样点与注意力权重"""
    support_grid: Tuple[int, int, int]
    offset_scale: float
    blocks: List[Dict[str, np.ndarray]] = field(default_factory=list)

    def record(self, points: np.ndarray, weights: np.ndarray):
        """points [heads,N,3]（归一化坐标），weights [heads,N_Q,N]"""
        self.blocks.append({"points": points.copy(), "weights": weights.copy()})

    @property
    def normalized_bound(self) -> float:
        """偏移上限换算到归一化坐标后的最大值"""
        return float(self.offset_scale * offset_to_normalized(self.support_grid).max())

    def to_dict(self) -> Dict[str, Any]:
        """每块、每头、每个采样点的坐标与收到的注意力总量"""
        blocks = []
        for b, entry in enumerate(self.blocks):
            points, weights = entry["points"], entry["weights"]
            heads = []
            for h in range(points.shape[0]):
                received = weights[h].sum(axis=0)
                voxel = normalized_to_voxel(points[h], self.support_grid)
                heads.append({
                    "head": h,
                    "points": [{"index": i,
                                "normalized": [float(v) for v in points[h, i]],
                                "voxel": [float(v) for v in voxel[i]],
                                "received_attention": float(received[i])}
                               for i in range(points.shape[1])],
                })
            blocks.append({"block": b, "heads": heads})
        return {"support_grid": list(self.support_grid), "offset_scale": self.offset_scale, "blocks": blocks}


class MultiHeadSelfAttention(Module):
    """qkv 多头自注意力"""

    def __init__(self, width: int, heads: int, rng: np.random.Generator, dtype=np.float64,
                 zero_init_output: bool = False):
        super().__init__()
        self.heads = heads
        self.query = Linear(width, width, rng, dtype)
        self.key = Linear(width, width, rng, dtype)
        self.value = Linear(width, width, rng, dtype)
        self.output = Linear(width, width, rng, dtype, zero_init=zero_init_output)

    def __call__(self, x: Tensor) -> Tensor:
        q = _split_heads(self.query(x), self.heads)
        k = _split_heads(self.key(x), self.heads)
        v = _split_heads(self.value(x), self.heads)
        scale = 1.0 / np.sqrt(q.shape[-1])
        weights = softmax((q @ k.transpose(0, 2, 1)) * scale, axis=-1)
        return self.output(_merge_heads(weights @ v))


class OffsetNetwork(Module):
    """θ_offset：linear(d -> d/2) + tanh + linear(-> 3·组数)，末层零初始化，输出 s·tanh"""

    def __init__(self, width: int, groups: int, offset_scale: float, rng: np.random.Generator, dtype=np.float64):
        super().__init__()
        hidden = max(width // 2, 1)
        self.groups = groups
        self.offset_scale = float(offset_scale)
        self.hidden = Linear(width, hidden, rng, dtype)
        self.output = Linear(hidden, 3 * groups, rng, dtype, zero_init=True)

    def __call__(self, q: Tensor) -> Tensor:
        """返回 Δp [N_Q,groups,3]，每个分量落在 (-s, s)"""
        raw = self.output(self.hidden(q).tanh())
        return (raw.tanh() * self.offset_scale).reshape(q.shape[0], self.groups, 3)


class DeformableCrossAttention(Module):
    """三维可变形交叉注意力

    q = F_Q·W_q；Δp = θ_offset(q)；在 P_Q + Δp 处三线性采样 F_S 得到 N 个特征，投影为 k̃、ṽ；
    每个查询在每个头上对全部 N 个形变键做 softmax。
    """

    def __init__(self, width: int, support_channels: int, config: QueryingConfig, rng: np.random.Generator,
                 dtype=np.float64, zero_init_output: bool = False):
        super().__init__()
        self.heads = config.heads
        self.per_head_offsets = config.per_head_offsets
        self.offset_scale = config.offset_scale
        self.query = Linear(width, width, rng, dtype)
        self.key = Linear(support_channels, width, rng, dtype)
        self.value = Linear(support_channels, width, rng, dtype)
        self.output = Linear(width, width, rng, dtype, zero_init=zero_init_output)
        self.offset_net = OffsetNetwork(width, self.heads if self.per_head_offsets else 1,
                                        config.offset_scale, rng, dtype)
        self.reference_points = reference_grid(*config.grid)

    def sample_points(self, q: Tensor, grid_shape: Sequence[int]) -> Tensor:
        """形变采样点（归一化坐标）[N_Q,groups,3]"""
        delta = self.offset_net(q) * offset_to_normalized(grid_shape).astype(q.dtype)
        return delta + self.reference_points[:, None, :].astype(q.dtype)

    def __call__(self, x: Tensor, support: Tensor, trace: Optional[AttentionTrace] = None) -> Tensor:
        if support.ndim != 4:
            raise ShapeError(f"support features must be [C,D,H,W], got {support.shape}")
        n_q = x.shape[0]
        if n_q != self.reference_points.shape[0]:
            raise ShapeError(f"{n_q} queries but {self.reference_points.shape[0]} reference points")
        grid_shape = support.shape[1:]
        q = self.query(x)
        points = self.sample_points(q, grid_shape)
        groups = points.shape[1]
        qh = _split_heads(q, self.heads)
        dh = qh.shape[-1]

        keys, values = [], []
        for g in range(groups):
            sampled = trilinear_sample(support, points[:, g, :])
            keys.append(_split_heads(self.key(sampled), self.heads))
            values.append(_split_heads(self.value(sampled), self.heads))
        if groups == 1:
            k, v = keys[0], values[0]
        else:
            # 第 h 个头只用第 h 组采样点
            k = stack([keys[h][h] for h in range(self.heads)], axis=0)
            v = stack([values[h][h] for h in range(self.heads)], axis=0)

        try:
            logits = (qh @ k.transpose(0, 2, 1)) * (1.0 / np.sqrt(dh))
        except NumericalError:
            norms = {name: float(np.linalg.norm(p.data)) for name, p in self.named_parameters()}
            logger.error(f"交叉注意力出现非有限值: 参数范数 {norms}")
            raise NumericalError(
                f"non-finite cross-attention logits (queries {n_q}, support {tuple(support.shape)}, "
                f"query norm {float(np.linalg.norm(q.data)):.3e}, "
                f"key norm {float(np.linalg.norm(k.data)):.3e})")
        weights = softmax(logits, axis=-1)
        if trace is not None:
            pts = points.data.transpose(1, 0, 2)
            if groups == 1:
                pts = np.repeat(pts, self.heads, axis=0)
            trace.record(pts, weights.data)
        return self.output(_merge_heads(weights @ v))


class FeedForward(Module):
    def __init__(self, width: int, hidden: int, rng: np.random.Generator, dtype=np.float64,
                 zero_init_output: bool = False):
        super().__init__()
        self.fc1 = Linear(width, hidden, rng, dtype)
        self.fc2 = Linear(hidden, width, rng, dtype, zero_init=zero_init_output)

    def __call__(self, x: Tensor) -> Tensor:
        return self.fc2(self.fc1(x).relu())


class QueryingBlock(Module):
    """x + SA(LN(x)) -> x + DCA(LN(x), F_S) -> x + FFN(LN(x))"""

    def __init__(self, config: QueryingConfig, support_channels: int, rng: np.random.Generator,
                 dtype=np.float64, zero_init_residual: bool = False):
        super().__init__()
        d = config.width
        self.norm_self = LayerNorm(d, dtype)
        self.self_attention = MultiHeadSelfAttention(d, config.heads, rng, dtype, zero_init_residual)
        self.norm_cross = LayerNorm(d, dtype)
        self.cross_attention = DeformableCrossAttention(d, support_channels, config, rng, dtype, zero_init_residual)
        self.norm_ffn = LayerNorm(d, dtype)
        self.ffn = FeedForward(d, config.ffn_hidden, rng, dtype, zero_init_residual)

    def __call__(self, x: Tensor, support: Tensor, trace: Optional[AttentionTrace] = None) -> Tensor:
        x = x + self.self_attention(self.norm_self(x))
        x = x + self.cross_attention(self.norm_cross(x), support, trace)
        return x + self.ffn(self.norm_ffn(x))


class QueryingModule(Module):
    """从可学习的 Q_init 出发依次经过 L 个查询块"""

    def __init__(self, config: QueryingConfig, support_channels: int, rng: np.random.Generator,
                 dtype=np.float64, zero_init_residual: bool = False):
        super().__init__()
        self.config = config
        self.queries = parameter(rng.normal(0.0, config.init_std, size=(config.num_queries, config.width)), dtype)
        self.blocks = ModuleList([
            QueryingBlock(config, support_channels, rng, dtype, zero_init_residual)
            for _ in range(config.num_blocks)
        ])

    def querying_block(self, index: int, state: QueryState, support: Tensor,
                       trace: Optional[AttentionTrace] = None) -> QueryState:
        return QueryState(self.blocks[index](state.F_Q, support, trace))

    def __call__(self, support: SupportFeatures, trace: Optional[AttentionTrace] = None) -> QueryState:
        """位置编码只加一次，所有块共用"""
        encoded = support.encoded()
        state = QueryState(self.queries)
        for index in range(len(self.blocks)):
            state = self.querying_block(index, state, encoded, trace)
        return state

    def new_trace(self, support: SupportFeatures) -> AttentionTrace:
        return AttentionTrace(support_grid=support.grid_shape, offset_scale=self.config.offset_scale)
