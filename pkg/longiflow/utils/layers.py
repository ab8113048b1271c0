"""参数化网络层

Module 按属性赋值顺序登记参数与子模块，named_parameters() 给出稳定的扁平命名枚举，
优化器和检查点都依赖这一顺序。
"""
from collections import OrderedDict
from typing import Dict, Iterator, List, Optional, Tuple

import numpy as np

from .errors import ShapeError
from .functional import conv3d, layer_norm, linear
from .tensor import Tensor


def parameter(data: np.ndarray, dtype=np.float64, trainable: bool = True) -> Tensor:
    return Tensor(np.array(data, dtype=dtype), requires_grad=trainable)


class Module:
    """参数容器基类"""

    def __init__(self):
        object.__setattr__(self, "_parameters", OrderedDict())
        object.__setattr__(self, "_modules", OrderedDict())

    def __setattr__(self, name, value):
        if isinstance(value, Tensor):
            self._parameters[name] = value
        elif isinstance(value, Module):
            self._modules[name] = value
        object.__setattr__(self, name, value)

    def named_parameters(self, prefix: str = "") -> Iterator[Tuple[str, Tensor]]:
        for name, param in self._parameters.items():
            yield prefix + name, param
        for name, module in self._modules.items():
            yield from module.named_parameters(prefix + name + ".")

    def trainable_parameters(self) -> "OrderedDict[str, Tensor]":
        return OrderedDict((n, p) for n, p in self.named_parameters() if p.requires_grad)

    def zero_grad(self):
        for _, param in self.named_parameters():
            param.grad = None

    def state_dict(self) -> "OrderedDict[str, np.ndarray]":
        return OrderedDict((n, p.data.copy()) for n, p in self.named_parameters())

    def load_state_dict(self, state: Dict[str, np.ndarray]):
        own = dict(self.named_parameters())
        missing = [n for n in own if n not in state]
        if missing:
            raise ShapeError(f"checkpoint is missing parameters: {', '.join(missing[:5])}")
        for name, param in own.items():
            value = np.asarray(state[name])
            if value.shape != param.shape:
                raise ShapeError(f"parameter {name}: checkpoint shape {value.shape} != model shape {param.shape}")
            param.data = value.astype(param.dtype, copy=True)

    def parameter_count(self) -> int:
        return int(sum(p.size for _, p in self.named_parameters()))


class ModuleList(Module):
    """有序子模块列表，参数名为下标"""

    def __init__(self, modules: Optional[List[Module]] = None):
        super().__init__()
        for module in modules or []:
            self.append(module)

    def append(self, module: Module):
        setattr(self, str(len(self._modules)), module)

    def __iter__(self):
        return iter(self._modules.values())

    def __len__(self) -> int:
        return len(self._modules)

    def __getitem__(self, index: int) -> Module:
        return list(self._modules.values())[index]


class Linear(Module):
    """仿射层，weight [din,dout]"""

    def __init__(self, din: int, dout: int, rng: np.random.Generator, dtype=np.float64, zero_init: bool = False):
        super().__init__()
        bound = 1.0 / np.sqrt(din)
        if zero_init:
            self.weight = parameter(np.zeros((din, dout)), dtype)
            self.bias = parameter(np.zeros(dout), dtype)
        else:
            self.weight = parameter(rng.uniform(-bound, bound, size=(din, dout)), dtype)
            self.bias = parameter(rng.uniform(-bound, bound, size=dout), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        return linear(x, self.weight, self.bias)


class Conv3d(Module):
    """三维卷积层（He 均匀初始化）"""

    def __init__(self, cin: int, cout: int, kernel: int, rng: np.random.Generator,
                 stride: int = 1, padding: int = 0, dtype=np.float64):
        super().__init__()
        fan_in = cin * kernel ** 3
        bound = np.sqrt(6.0 / fan_in)
        self.weight = parameter(rng.uniform(-bound, bound, size=(cout, cin, kernel, kernel, kernel)), dtype)
        self.bias = parameter(np.zeros(cout), dtype)
        self.in_channels = cin
        self.out_channels = cout
        self.kernel = kernel
        self.stride = stride
        self.padding = padding

    def __call__(self, x: Tensor) -> Tensor:
        return conv3d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class LayerNorm(Module):
    def __init__(self, dim: int, dtype=np.float64, eps: float = 1e-5):
        super().__init__()
        self.gamma = parameter(np.ones(dim), dtype)
        self.beta = parameter(np.zeros(dim), dtype)
        self.eps = eps

    def __call__(self, x: Tensor) -> Tensor:
        return layer_norm(x, self.gamma, self.beta, self.eps)
