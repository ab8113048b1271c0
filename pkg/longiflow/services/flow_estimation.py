"""纵向流场估计服务

Horn-Schunck 变分光流与 demons 形变配准，两者都输出体素单位的 3 通道位移场 [3,D,H,W]，
分量顺序 (depth,height,width)。光流为正向运动（内容沿 +v 移动），配准场为回拉场
（warp(moving, u) ≈ fixed）。
"""
from dataclasses import dataclass, field
from typing import List, Optional, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from ..models.flow import FlowField, FlowMethod
from ..models.model_config import FlowSettings
from ..utils.errors import DataError, ShapeError, UsageError
from ..utils.functional import gather_trilinear
from ..utils.logger import logger
from ..utils.validators import Validators

# 回溯线搜索最多折半次数
MAX_BACKTRACK = 6


@dataclass
class FlowTrace:
    """迭代过程记录（能量或 MSE，每次迭代一个值，首项为初值）"""
    values: List[float] = field(default_factory=list)

    def is_non_increasing(self, rtol: float = 1e-12) -> bool:
        return all(b <= a + rtol * abs(a) for a, b in zip(self.values, self.values[1:]))


def _check_pair(a: np.ndarray, b: np.ndarray, what: str):
    if a.ndim != 3:
        raise ShapeError(f"{what}: volumes must be (D,H,W), got {a.shape}")
    ok, msg = Validators.validate_same_shape(a.shape, b.shape, what)
    if not ok:
        raise ShapeError(msg)


def _neighbor_sum(v: np.ndarray) -> np.ndarray:
    """各分量 6 邻域求和（越界邻居不计）"""
    padded = np.pad(v, ((0, 0), (1, 1), (1, 1), (1, 1)))
    return (padded[:, :-2, 1:-1, 1:-1] + padded[:, 2:, 1:-1, 1:-1]
            + padded[:, 1:-1, :-2, 1:-1] + padded[:, 1:-1, 2:, 1:-1]
            + padded[:, 1:-1, 1:-1, :-2] + padded[:, 1:-1, 1:-1, 2:])


def _neighbor_count(shape: Tuple[int, int, int]) -> np.ndarray:
    return _neighbor_sum(np.ones((1,) + tuple(shape)))[0]


def _hs_inputs(prior: np.ndarray, current: np.ndarray, intensity_scale: float, presmooth_sigma: float):
    p = np.asarray(prior, dtype=np.float64) * intensity_scale
    c = np.asarray(current, dtype=np.float64) * intensity_scale
    if presmooth_sigma > 0:
        p = gaussian_filter(p, presmooth_sigma, mode="nearest")
        c = gaussian_filter(c, presmooth_sigma, mode="nearest")
    grads = np.stack(np.gradient(0.5 * (p + c)), axis=0)
    return grads, c - p


def hs_energy(v: np.ndarray, grads: np.ndarray, it: np.ndarray, alpha: float) -> float:
    """Σ(g·v+It)² + (α²/6)·Σ_边 |Δv|²"""
    data = ((grads * v).sum(axis=0) + it) ** 2
    smooth = sum(float((np.diff(v, axis=axis) ** 2).sum()) for axis in (1, 2, 3))
    return float(data.sum()) + alpha ** 2 / 6.0 * smooth


def horn_schunck_flow(prior: np.ndarray, current: np.ndarray, alpha: float = 1.0, iters: int = 500,
                      intensity_scale: float = 255.0, presmooth_sigma: float = 1.0,
                      trace: Optional[FlowTrace] = None) -> FlowField:
    """Horn-Schunck 光流

    红黑交替的 Jacobi 式更新：同色体素互不相邻，每半步都是对这些体素的精确极小化，
    能量因此单调不增。更新式 v = ū - g(g·ū + It)/(a + |g|²)，a = α²·n/6，
    ū 为 n 个真实邻居的均值。
    """
    _check_pair(prior, current, "horn_schunck_flow")
    if not alpha > 0:
        raise UsageError(f"alpha must be positive, got {alpha}")
    if iters < 1:
        raise UsageError(f"iters must be >= 1, got {iters}")
    grads, it = _hs_inputs(prior, current, intensity_scale, presmooth_sigma)
    shape = it.shape
    count = _neighbor_count(shape)
    safe_count = np.maximum(count, 1.0)
    weight = alpha ** 2 * count / 6.0
    grad_sq = (grads ** 2).sum(axis=0)
    denom = np.where(weight + grad_sq > 0, weight + grad_sq, 1.0)
    zz, yy, xx = np.indices(shape)
    colors = [((zz + yy + xx) % 2) == c for c in (0, 1)]

    v = np.zeros((3,) + shape, dtype=np.float64)
    if trace is not None:
        trace.values.append(hs_energy(v, grads, it, alpha))
    for _ in range(iters):
        for mask in colors:
            mean = _neighbor_sum(v) / safe_count
            step = ((grads * mean).sum(axis=0) + it) / denom
            update = mean - grads * step
            v = np.where(mask, update, v)
        if trace is not None:
            trace.values.append(hs_energy(v, grads, it, alpha))
    return FlowField(vectors=v.astype(np.float32), method=FlowMethod.OPTICAL_FLOW)


def warp(volume: np.ndarray, flow) -> np.ndarray:
    """output(p) = volume(p + flow(p))，三线性插值，越界夹到边界"""
    vectors = flow.vectors if isinstance(flow, FlowField) else np.asarray(flow)
    volume = np.asarray(volume)
    if vectors.shape != (3,) + volume.shape:
        raise ShapeError(f"warp: flow shape {vectors.shape} does not match volume shape {volume.shape}")
    if not np.any(vectors):
        return volume.copy()
    grid = np.stack(np.indices(volume.shape), axis=0).astype(np.float64)
    coords = (grid + vectors).reshape(3, -1).T
    out = gather_trilinear(volume[None].astype(np.float64), coords)[:, 0]
    return out.reshape(volume.shape).astype(volume.dtype)


def _mse(a: np.ndarray, b: np.ndarray) -> float:
    return float(np.mean((a - b) ** 2))


def demons_register(fixed: np.ndarray, moving: np.ndarray, iters: int = 50, smooth_sigma: float = 1.0,
                    trace: Optional[FlowTrace] = None) -> FlowField:
    """demons 配准：返回 u 使 warp(moving, u) 逼近 fixed

    力 δ = (f - m∘φ)·∇ / (|∇|² + (f - m∘φ)²)，∇ 取两幅图梯度的平均；每步后高斯平滑位移场。
    步长回溯折半，接受的步使 MSE 不增；找不到可接受步长时保持不动。
    """
    _check_pair(fixed, moving, "demons_register")
    if smooth_sigma < 0:
        raise UsageError(f"smooth_sigma must be non-negative, got {smooth_sigma}")
    f = np.asarray(fixed, dtype=np.float64)
    m = np.asarray(moving, dtype=np.float64)
    grad_f = np.stack(np.gradient(f), axis=0)
    u = np.zeros((3,) + f.shape, dtype=np.float64)
    warped = m.copy()
    mse = _mse(f, warped)
    if trace is not None:
        trace.values.append(mse)

    for _ in range(iters):
        diff = f - warped
        grad = 0.5 * (grad_f + np.stack(np.gradient(warped), axis=0))
        denom = (grad ** 2).sum(axis=0) + diff ** 2
        force = np.where(denom > 1e-12, diff / np.where(denom > 1e-12, denom, 1.0), 0.0) * grad
        step = 1.0
        for _ in range(MAX_BACKTRACK):
            candidate = u + step * force
            if smooth_sigma > 0:
                candidate = np.stack([gaussian_filter(c, smooth_sigma, mode="nearest") for c in candidate])
            candidate_warped = warp(m, candidate)
            candidate_mse = _mse(f, candidate_warped)
            if candidate_mse <= mse:
                u, warped, mse = candidate, candidate_warped, candidate_mse
                break
            step *= 0.5
        if trace is not None:
            trace.values.append(mse)
    return FlowField(vectors=u.astype(np.float32), method=FlowMethod.REGISTRATION)


def scale_flow(flow: FlowField, t_curr: float, t_prior: float) -> FlowField:
    """按扫描间隔把流场归一化到每年"""
    gap = float(t_curr) - float(t_prior)
    if not gap > 0:
        raise DataError(f"non-positive scan interval: t_curr={t_curr} t_prior={t_prior}")
    vectors = (flow.vectors.astype(np.float64) / gap).astype(flow.vectors.dtype)
    return FlowField(vectors=vectors, method=flow.method, source_gap_years=1.0, subject_id=flow.subject_id,
                     t_curr=float(t_curr), t_prior=float(t_prior))


class FlowEstimator:
    """按配置选择光流或配准，并完成间隔归一化"""

    def __init__(self, settings: Optional[FlowSettings] = None):
        self.settings = settings or FlowSettings()

    @property
    def method(self) -> FlowMethod:
        return self.settings.method

    def raw_flow(self, prior: np.ndarray, current: np.ndarray) -> FlowField:
        s = self.settings
        if s.method == FlowMethod.OPTICAL_FLOW:
            return horn_schunck_flow(prior, current, alpha=s.hs_alpha, iters=s.hs_iters,
                                     intensity_scale=s.hs_intensity_scale, presmooth_sigma=s.hs_presmooth_sigma)
        return demons_register(current, prior, iters=s.demons_iters, smooth_sigma=s.demons_smooth_sigma)

    def estimate(self, prior: np.ndarray, current: np.ndarray, t_prior: float, t_curr: float,
                 subject_id: str = "") -> FlowField:
        """计算一对扫描的流场并按年归一化"""
        if not float(t_curr) - float(t_prior) > 0:
            raise DataError(f"non-positive scan interval for {subject_id}: t_curr={t_curr} t_prior={t_prior}")
        raw = self.raw_flow(prior, current)
        raw.subject_id = subject_id
        scaled = scale_flow(raw, t_curr, t_prior)
        logger.debug(f"流场完成 {subject_id} {t_prior:g}->{t_curr:g}: 平均幅值 {scaled.magnitude().mean():.4f}")
        return scaled
