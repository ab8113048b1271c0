"""Adam 优化器"""
from dataclasses import dataclass, field
from typing import Dict, Mapping, Optional, Tuple

import numpy as np

from .errors import NumericalError, ShapeError
from .tensor import Tensor


@dataclass
class AdamState:
    """Adam 的一阶/二阶矩与步数"""
    lr: float = 5e-5
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def to_arrays(self) -> Dict[str, np.ndarray]:
        """展开成检查点可保存的命名数组"""
        arrays = {"adam.step_count": np.array(self.step_count, dtype=np.int64)}
        for name, value in self.first_moment.items():
            arrays[f"adam.m.{name}"] = value
        for name, value in self.second_moment.items():
            arrays[f"adam.v.{name}"] = value
        return arrays

    def load_arrays(self, arrays: Mapping[str, np.ndarray]):
        self.step_count = int(arrays.get("adam.step_count", 0))
        self.first_moment = {k[len("adam.m."):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.m.")}
        self.second_moment = {k[len("adam.v."):]: np.array(v) for k, v in arrays.items() if k.startswith("adam.v.")}


def adam_step(params: Mapping[str, Tensor], grads: Mapping[str, np.ndarray],
              state: AdamState) -> Tuple[Mapping[str, Tensor], AdamState]:
    """带偏差修正的 Adam 更新（原地修改参数数据）"""
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError(f"non-finite gradient for parameter {name}")
        if grad.shape != params[name].shape:
            raise ShapeError(f"gradient shape {grad.shape} does not match parameter {name} shape {params[name].shape}")

    state.step_count += 1
    t = state.step_count
    bias1 = 1.0 - state.beta1 ** t
    bias2 = 1.0 - state.beta2 ** t
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            continue
        m = state.first_moment.get(name)
        v = state.second_moment.get(name)
        if m is None:
            m = np.zeros_like(param.data)
            v = np.zeros_like(param.data)
        m = state.beta1 * m + (1.0 - state.beta1) * grad
        v = state.beta2 * v + (1.0 - state.beta2) * grad * grad
        state.first_moment[name] = m
        state.second_moment[name] = v
        m_hat = m / bias1
        v_hat = v / bias2
        param.data = (param.data - state.lr * m_hat / (np.sqrt(v_hat) + state.epsilon)).astype(param.dtype, copy=False)
    return params, state


class AdamOptimizer:
    """绑定到一组命名参数的 Adam"""

    def __init__(self, params: Mapping[str, Tensor], lr: float = 5e-5, beta1: float = 0.9,
                 beta2: float = 0.999, epsilon: float = 1e-8, state: Optional[AdamState] = None):
        self.params = dict(params)
        self.state = state or AdamState(lr=lr, beta1=beta1, beta2=beta2, epsilon=epsilon)

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None

    def step(self):
        grads = {name: p.grad for name, p in self.params.items() if p.grad is not None}
        adam_step(self.params, grads, self.state)
