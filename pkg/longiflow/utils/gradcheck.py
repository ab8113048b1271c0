"""有限差分梯度校验"""
from dataclasses import dataclass, asdict
from typing import Any, Callable, Dict, Optional, Sequence, Tuple

import numpy as np

from .errors import GradientCheckError, UsageError
from .logger import logger
from .tensor import Tensor


@dataclass
class GradCheckResult:
    """一次梯度校验的最差元素"""
    max_relative_error: float
    input_index: int
    element_index: Tuple[int, ...]
    analytic: float
    numeric: float
    elements_checked: int

    def to_dict(self) -> Dict[str, Any]:
        data = asdict(self)
        data["element_index"] = list(self.element_index)
        return data


def check_gradients(scalar_fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
                    atol: float = 1e-5, max_elements: Optional[int] = None,
                    seed: int = 0) -> GradCheckResult:
    """反向模式梯度 vs 中心差分，逐元素比较

    相对误差定义为 |a-n| / max(|a|, |n|, atol)。max_elements 限制每个输入抽查的元素个数。
    """
    if not 1e-6 <= eps <= 1e-3:
        raise UsageError(f"grad_check eps must lie in [1e-6, 1e-3], got {eps}")
    for t in inputs:
        t.grad = None
    out = scalar_fn(*inputs)
    if out.size != 1:
        raise UsageError(f"grad_check needs a scalar function, got output shape {out.shape}")
    out.backward()
    analytic = [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in inputs]

    rng = np.random.default_rng(seed)
    worst = GradCheckResult(0.0, -1, (), 0.0, 0.0, 0)
    checked = 0
    for i, t in enumerate(inputs):
        flat_count = t.data.size
        if max_elements is not None and flat_count > max_elements:
            positions = np.sort(rng.choice(flat_count, size=max_elements, replace=False))
        else:
            positions = np.arange(flat_count)
        for flat in positions:
            idx = np.unravel_index(int(flat), t.shape)
            original = t.data[idx]
            t.data[idx] = original + eps
            f_plus = scalar_fn(*inputs).item()
            t.data[idx] = original - eps
            f_minus = scalar_fn(*inputs).item()
            t.data[idx] = original
            numeric = (f_plus - f_minus) / (2.0 * eps)
            a = float(analytic[i][idx])
            err = abs(a - numeric) / max(abs(a), abs(numeric), atol)
            checked += 1
            if err > worst.max_relative_error or worst.input_index < 0:
                worst = GradCheckResult(err, i, tuple(int(v) for v in idx), a, numeric, 0)
    worst.elements_checked = checked
    return worst


def grad_check(scalar_fn: Callable[..., Tensor], inputs: Sequence[Tensor], eps: float = 1e-6,
               threshold: Optional[float] = None, **kwargs) -> float:
    """返回最大相对误差；给定 threshold 时超限即抛出 GradientCheckError"""
    result = check_gradients(scalar_fn, inputs, eps=eps, **kwargs)
    if threshold is not None and result.max_relative_error > threshold:
        logger.error(f"梯度校验失败: 输入{result.input_index} 元素{result.element_index} "
                     f"解析={result.analytic:.6e} 数值={result.numeric:.6e}")
        raise GradientCheckError(
            f"gradient mismatch at input {result.input_index} element {result.element_index}: "
            f"analytic {result.analytic:.6e} vs numeric {result.numeric:.6e} "
            f"(relative error {result.max_relative_error:.3e} > {threshold:.1e}); "
            f"possibly a non-differentiable point")
    return result.max_relative_error
