"""可求导算子

卷积、线性映射、softmax、层归一化、三线性采样与二分类交叉熵。
坐标约定：轴顺序统一为 (depth, height, width)；归一化坐标 -1 对应下标 0 的体素中心，
+1 对应下标 extent-1 的体素中心；越界坐标夹到边界体素。
"""
from typing import Optional, Tuple

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .errors import ShapeError
from .tensor import Tensor, _result, _stable_sigmoid


def conv3d(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None,
           stride: int = 1, padding: int = 0) -> Tensor:
    """三维卷积，输入 [Cin,D,H,W]，卷积核 [Cout,Cin,k,k,k]"""
    if x.ndim != 4 or weight.ndim != 5:
        raise ShapeError(f"conv3d expects input [Cin,D,H,W] and weight [Cout,Cin,k,k,k], got {x.shape} and {weight.shape}")
    cin = x.shape[0]
    cout, w_cin, k = weight.shape[0], weight.shape[1], weight.shape[2]
    if cin != w_cin:
        raise ShapeError(f"conv3d channel mismatch: input has {cin} channels, weight expects {w_cin}")
    if weight.shape[2:] != (k, k, k):
        raise ShapeError(f"conv3d needs a cubic kernel, got {weight.shape[2:]}")
    if stride < 1:
        raise ShapeError(f"conv3d stride must be >= 1, got {stride}")
    spatial = x.shape[1:]
    if any(k > n + 2 * padding for n in spatial):
        raise ShapeError(f"conv3d kernel {k} larger than padded input {spatial} (padding {padding})")
    if bias is not None and bias.shape != (cout,):
        raise ShapeError(f"conv3d bias must have shape ({cout},), got {bias.shape}")

    xp = np.pad(x.data, ((0, 0), (padding, padding), (padding, padding), (padding, padding))) if padding else x.data
    windows = sliding_window_view(xp, (k, k, k), axis=(1, 2, 3))[:, ::stride, ::stride, ::stride]
    out_spatial = windows.shape[1:4]
    w = weight.data
    out = np.tensordot(windows, w, axes=([0, 4, 5, 6], [1, 2, 3, 4]))
    out = np.moveaxis(out, -1, 0)
    if bias is not None:
        out = out + bias.data[:, None, None, None]

    def backward(g):
        grad_w = np.tensordot(g, windows, axes=([1, 2, 3], [1, 2, 3]))
        grad_xp = np.zeros(xp.shape, dtype=xp.dtype)
        d_out, h_out, w_out = out_spatial
        for i in range(k):
            for j in range(k):
                for l in range(k):
                    contrib = np.tensordot(w[:, :, i, j, l], g, axes=([0], [0]))
                    grad_xp[:, i:i + stride * (d_out - 1) + 1:stride,
                            j:j + stride * (h_out - 1) + 1:stride,
                            l:l + stride * (w_out - 1) + 1:stride] += contrib
        if padding:
            grad_xp = grad_xp[:, padding:-padding, padding:-padding, padding:-padding]
        grads = [grad_xp, grad_w]
        if bias is not None:
            grads.append(g.sum(axis=(1, 2, 3)))
        return grads

    parents = (x, weight) if bias is None else (x, weight, bias)
    return _result(out, parents, backward, "conv3d")


def linear(x: Tensor, weight: Tensor, bias: Optional[Tensor] = None) -> Tensor:
    """对最后一维做仿射映射，weight 形状 [din,dout]"""
    if x.shape[-1] != weight.shape[0]:
        raise ShapeError(f"linear expects trailing extent {weight.shape[0]}, got input shape {x.shape}")
    out = x @ weight
    if bias is not None:
        if bias.shape != (weight.shape[1],):
            raise ShapeError(f"linear bias must have shape ({weight.shape[1]},), got {bias.shape}")
        out = out + bias
    return out


def softmax(logits: Tensor, axis: int = -1) -> Tensor:
    """减去最大值后的稳定 softmax"""
    z = logits.data - logits.data.max(axis=axis, keepdims=True)
    e = np.exp(z)
    y = e / e.sum(axis=axis, keepdims=True)

    def backward(g):
        return (y * (g - (g * y).sum(axis=axis, keepdims=True)),)

    return _result(y, (logits,), backward, "softmax")


def layer_norm(x: Tensor, gamma: Tensor, beta: Tensor, eps: float = 1e-5) -> Tensor:
    """最后一维归一化后缩放平移"""
    if eps <= 0:
        raise ShapeError(f"layer_norm eps must be positive, got {eps}")
    centered = x - x.mean(axis=-1, keepdims=True)
    var = (centered * centered).mean(axis=-1, keepdims=True)
    return centered * (var + eps) ** -0.5 * gamma + beta


def _corner_layout(vox: np.ndarray, extents: Tuple[int, int, int]):
    """体素坐标 [N,3] -> 左下角下标、插值分数、未被夹住的掩码"""
    ext = np.asarray(extents)
    span = np.maximum(ext - 1, 0).astype(vox.dtype)
    clamped = np.clip(vox, 0.0, span)
    inside = (vox >= 0.0) & (vox <= span)
    base = np.minimum(np.floor(clamped).astype(np.int64), np.maximum(ext - 2, 0))
    frac = clamped - base
    upper = np.minimum(base + 1, ext - 1)
    return base, upper, frac, inside


def gather_trilinear(field: np.ndarray, vox: np.ndarray) -> np.ndarray:
    """纯 numpy 三线性插值，field [C,D,H,W]，体素坐标 vox [N,3]，返回 [N,C]"""
    base, upper, frac, _ = _corner_layout(vox, field.shape[1:])
    out = np.zeros((vox.shape[0], field.shape[0]), dtype=np.result_type(field.dtype, vox.dtype))
    for cz in (0, 1):
        z = upper[:, 0] if cz else base[:, 0]
        wz = frac[:, 0] if cz else 1.0 - frac[:, 0]
        for cy in (0, 1):
            y = upper[:, 1] if cy else base[:, 1]
            wy = frac[:, 1] if cy else 1.0 - frac[:, 1]
            for cx in (0, 1):
                x = upper[:, 2] if cx else base[:, 2]
                wx = frac[:, 2] if cx else 1.0 - frac[:, 2]
                out += (wz * wy * wx)[:, None] * field[:, z, y, x].T
    return out


def normalized_to_voxel(points: np.ndarray, extents: Tuple[int, int, int]) -> np.ndarray:
    span = np.maximum(np.asarray(extents) - 1, 0)
    return (points + 1.0) * 0.5 * span


def trilinear_sample(field: Tensor, points: Tensor) -> Tensor:
    """在归一化坐标处三线性采样，field [C,D,H,W]，points [N,3]，返回 [N,C]

    对 field 与 points 均可求导；被夹到边界的坐标分量梯度为零。
    """
    if field.ndim != 4 or points.ndim != 2 or points.shape[1] != 3:
        raise ShapeError(f"trilinear_sample expects field [C,D,H,W] and points [N,3], got {field.shape} and {points.shape}")
    extents = field.shape[1:]
    f = field.data
    half_span = 0.5 * np.maximum(np.asarray(extents) - 1, 0)
    vox = normalized_to_voxel(points.data, extents)
    base, upper, frac, inside = _corner_layout(vox, extents)
    out = gather_trilinear(f, vox)

    def backward(g):
        grad_field = np.zeros_like(f)
        grad_frac = np.zeros(frac.shape, dtype=g.dtype)
        for cz in (0, 1):
            z = upper[:, 0] if cz else base[:, 0]
            wz = frac[:, 0] if cz else 1.0 - frac[:, 0]
            dz = 1.0 if cz else -1.0
            for cy in (0, 1):
                y = upper[:, 1] if cy else base[:, 1]
                wy = frac[:, 1] if cy else 1.0 - frac[:, 1]
                dy = 1.0 if cy else -1.0
                for cx in (0, 1):
                    x = upper[:, 2] if cx else base[:, 2]
                    wx = frac[:, 2] if cx else 1.0 - frac[:, 2]
                    dx = 1.0 if cx else -1.0
                    np.add.at(grad_field, (slice(None), z, y, x), ((wz * wy * wx)[:, None] * g).T)
                    proj = (g * f[:, z, y, x].T).sum(axis=1)
                    grad_frac[:, 0] += proj * dz * wy * wx
                    grad_frac[:, 1] += proj * wz * dy * wx
                    grad_frac[:, 2] += proj * wz * wy * dx
        grad_points = grad_frac * inside * half_span
        return grad_field, grad_points.astype(points.data.dtype)

    return _result(out, (field, points), backward, "trilinear_sample")


def binary_cross_entropy_with_logits(logit: Tensor, label: float) -> Tensor:
    """log-sigmoid 形式的稳定二分类交叉熵"""
    x = logit.data
    y = float(label)
    loss = np.maximum(x, 0.0) - x * y + np.log1p(np.exp(-np.abs(x)))

    def backward(g):
        return (g * (_stable_sigmoid(np.asarray(x, dtype=logit.data.dtype)) - y),)

    return _result(loss, (logit,), backward, "bce_with_logits")
