"""梯度自检套件

在 64 位精度的玩具尺寸上，对每个可求导算子、各网络组件以及端到端 BCE 做中心差分校验。
纯光滑算子阈值 1e-4，含 relu / 分段线性采样的组合阈值 1e-3。
"""
from dataclasses import dataclass
from typing import Any, Callable, Dict, List, Optional, Sequence, Tuple

import numpy as np

from ..models.model_config import EmbeddingConfig, EmbeddingMode, QueryingConfig
from ..models.sample import PairSample
from ..models.scan import PairKind
from ..utils.errors import GradientCheckError, UsageError
from ..utils.functional import conv3d, layer_norm, linear, softmax, trilinear_sample
from ..utils.gradcheck import GradCheckResult, check_gradients
from ..utils.layers import Module
from ..utils.logger import logger
from ..utils.tensor import Tensor, concat, stack
from .embedding_module import EmbeddingModule
from .longitudinal_model import LongitudinalClassifier
from .metrics import bce_loss
from .querying_module import DeformableCrossAttention, MultiHeadSelfAttention, OffsetNetwork, QueryingBlock

SMOOTH_THRESHOLD = 1e-4
PIECEWISE_THRESHOLD = 1e-3

CaseBuilder = Callable[[np.random.Generator], Tuple[Callable[..., Tensor], List[Tensor]]]


def toy_embedding_config(mode: EmbeddingMode = EmbeddingMode.FLOW) -> EmbeddingConfig:
    """16³ 输入、两个阶段、4³ 支撑网格"""
    return EmbeddingConfig(input_size=16, stage_channels=[2, 4], downsample_factor_total=4,
                           support_channels=6, mode=mode, dense_layers=1, growth_rate=2)


def toy_querying_config() -> QueryingConfig:
    return QueryingConfig(num_blocks=1, grid=(2, 2, 2), width=8, heads=2, ffn_hidden=16)


def _var(rng: np.random.Generator, *shape, scale: float = 1.0) -> Tensor:
    return Tensor(rng.normal(0.0, scale, size=shape), requires_grad=True)


def _randomize_zeros(module: Module, rng: np.random.Generator, scale: float = 0.1):
    """零初始化的参数换成小随机值，使采样点离开体素网格上的不可导点"""
    for _, param in module.named_parameters():
        if not np.any(param.data):
            param.data = rng.normal(0.0, scale, size=param.shape)


def _params(module: Module) -> List[Tensor]:
    return list(module.trainable_parameters().values())


def _tensor_ops(rng):
    a, b = _var(rng, 3, 4), _var(rng, 4, 2)

    def fn(a, b):
        h = (a @ b).tanh()
        s = concat([h, a[:, :2].sigmoid()], axis=1)
        t = stack([s, s * 0.5], axis=0).transpose(1, 0, 2).reshape(3, 8)
        return (t ** 2).sum() + (b * b + 1.0).log().mean() + (a / (b.sum() ** 2 + 1.0)).exp().mean()

    return fn, [a, b]


def _conv3d(rng):
    x, w, b = _var(rng, 2, 5, 5, 5), _var(rng, 3, 2, 3, 3, 3, scale=0.3), _var(rng, 3)
    return (lambda x, w, b: (conv3d(x, w, b, stride=2, padding=1) ** 2).sum() * 0.5), [x, w, b]


def _linear(rng):
    x, w, b = _var(rng, 5, 8), _var(rng, 8, 4, scale=0.3), _var(rng, 4)
    return (lambda x, w, b: linear(x, w, b).tanh().sum()), [x, w, b]


def _softmax(rng):
    x = _var(rng, 3, 5)
    c = rng.normal(size=(3, 5))
    return (lambda x: (softmax(x, axis=-1) * c).sum()), [x]


def _layer_norm(rng):
    x, gamma, beta = _var(rng, 4, 6), _var(rng, 6), _var(rng, 6)
    c = rng.normal(size=(4, 6))
    return (lambda x, g, b: (layer_norm(x, g, b) * c).sum()), [x, gamma, beta]


def _trilinear(rng):
    field = _var(rng, 2, 4, 4, 4)
    points = Tensor(rng.uniform(-0.9, 0.9, size=(6, 3)), requires_grad=True)
    c = rng.normal(size=(6, 2))
    return (lambda f, p: (trilinear_sample(f, p) * c).sum()), [field, points]


def _bce(rng):
    logit = Tensor(np.array([0.3]), requires_grad=True)
    return (lambda z: bce_loss(z, 1) + bce_loss(z * -2.0, 0)), [logit]


def _offset_network(rng):
    net = OffsetNetwork(8, 2, 2.0, rng)
    _randomize_zeros(net, rng, 0.3)
    q = _var(rng, 5, 8)
    c = rng.normal(size=(5, 2, 3))
    return (lambda *_: (net(q) * c).sum()), [q] + _params(net)


def _self_attention(rng):
    attn = MultiHeadSelfAttention(8, 2, rng)
    x = _var(rng, 4, 8)
    c = rng.normal(size=(4, 8))
    return (lambda *_: (attn(x) * c).sum()), [x] + _params(attn)


def _cross_attention(rng):
    config = toy_querying_config()
    attn = DeformableCrossAttention(8, 6, config, rng)
    _randomize_zeros(attn, rng)
    x, support = _var(rng, config.num_queries, 8), _var(rng, 6, 3, 3, 3)
    c = rng.normal(size=(config.num_queries, 8))
    return (lambda *_: (attn(x, support) * c).sum()), [x, support] + _params(attn)


def _querying_block(rng):
    config = toy_querying_config()
    block = QueryingBlock(config, 6, rng)
    _randomize_zeros(block, rng)
    x, support = _var(rng, config.num_queries, 8), _var(rng, 6, 3, 3, 3)
    c = rng.normal(size=(config.num_queries, 8))
    return (lambda *_: (block(x, support) * c).sum()), [x, support] + _params(block)


def _adapters(rng):
    module = EmbeddingModule(toy_embedding_config(), rng)
    image = rng.normal(size=(16, 16, 16))
    flow = rng.normal(size=(3, 16, 16, 16))
    c1, c2 = rng.normal(size=(2, 16, 16, 16)), rng.normal(size=(2, 16, 16, 16))

    def fn(*_):
        return (module.adapt_image(image) * c1).sum() + (module.adapt_flow(flow) * c2).sum()

    params = _params(module.adapter_image) + _params(module.adapter_flow)
    return fn, params


def _prior_embedding(rng):
    module = EmbeddingModule(toy_embedding_config(EmbeddingMode.PRIOR_IMAGE), rng)
    _randomize_zeros(module, rng)
    current, prior = rng.normal(size=(16, 16, 16)), rng.normal(size=(16, 16, 16))
    c = rng.normal(size=(12, 4, 4, 4))

    def fn(*_):
        with_prior = module.embed_with_prior(current, prior).values
        without = module.embed_with_prior(current, None).values
        return (with_prior * c).sum() + (without * c).sum()

    return fn, _params(module)


def _end_to_end(rng):
    model = LongitudinalClassifier(toy_embedding_config(), toy_querying_config(), seed=int(rng.integers(1 << 31)),
                                   dtype=np.float64)
    _randomize_zeros(model, rng)
    with_flow = PairSample(sample_id="gc-a@1", subject_id="gc-a", label=1, current=rng.normal(size=(16, 16, 16)),
                           pair_kind=PairKind.MULTI, flow=rng.normal(scale=0.5, size=(3, 16, 16, 16)),
                           t_curr=1.0, t_prior=0.0)
    without_flow = PairSample(sample_id="gc-b@0", subject_id="gc-b", label=0,
                              current=rng.normal(size=(16, 16, 16)))

    def fn(*_):
        return bce_loss(model(with_flow), 1) + bce_loss(model(without_flow), 0)

    return fn, _params(model)


@dataclass
class GradCheckCase:
    name: str
    threshold: float
    build: CaseBuilder


GRADCHECK_CASES: List[GradCheckCase] = [
    GradCheckCase("tensor_ops", SMOOTH_THRESHOLD, _tensor_ops),
    GradCheckCase("conv3d", SMOOTH_THRESHOLD, _conv3d),
    GradCheckCase("linear", SMOOTH_THRESHOLD, _linear),
    GradCheckCase("softmax", SMOOTH_THRESHOLD, _softmax),
    GradCheckCase("layer_norm", SMOOTH_THRESHOLD, _layer_norm),
    GradCheckCase("trilinear_sample", SMOOTH_THRESHOLD, _trilinear),
    GradCheckCase("bce_loss", SMOOTH_THRESHOLD, _bce),
    GradCheckCase("offset_network", PIECEWISE_THRESHOLD, _offset_network),
    GradCheckCase("self_attention", PIECEWISE_THRESHOLD, _self_attention),
    GradCheckCase("deformable_cross_attention", PIECEWISE_THRESHOLD, _cross_attention),
    GradCheckCase("querying_block", PIECEWISE_THRESHOLD, _querying_block),
    GradCheckCase("embedding_adapters", SMOOTH_THRESHOLD, _adapters),
    GradCheckCase("prior_image_embedding", PIECEWISE_THRESHOLD, _prior_embedding),
    GradCheckCase("end_to_end_bce", PIECEWISE_THRESHOLD, _end_to_end),
]


@dataclass
class GradCheckOutcome:
    name: str
    threshold: float
    result: GradCheckResult

    @property
    def passed(self) -> bool:
        return self.result.max_relative_error <= self.threshold

    def to_dict(self) -> Dict[str, Any]:
        data = self.result.to_dict()
        data.update({"name": self.name, "threshold": self.threshold, "passed": self.passed})
        return data


def run_gradcheck_suite(eps: float = 1e-6, max_elements: Optional[int] = 12, seed: int = 0,
                        names: Optional[Sequence[str]] = None) -> List[GradCheckOutcome]:
    """逐项运行，不因单项失败中断"""
    cases = GRADCHECK_CASES
    if names:
        known = {case.name for case in GRADCHECK_CASES}
        unknown = [n for n in names if n not in known]
        if unknown:
            raise UsageError(f"unknown gradient checks: {', '.join(unknown)}; available: {', '.join(sorted(known))}")
        cases = [case for case in GRADCHECK_CASES if case.name in names]

    outcomes = []
    for index, case in enumerate(cases):
        rng = np.random.default_rng([seed, index])
        fn, inputs = case.build(rng)
        result = check_gradients(fn, inputs, eps=eps, max_elements=max_elements, seed=seed)
        outcome = GradCheckOutcome(case.name, case.threshold, result)
        if not outcome.passed:
            logger.error(f"梯度校验 {case.name} 失败: 相对误差 {result.max_relative_error:.3e} > {case.threshold:.0e}")
        elif result.max_relative_error > 0.1 * case.threshold:
            logger.warning(f"梯度校验 {case.name} 接近阈值: {result.max_relative_error:.3e}")
        else:
            logger.info(f"梯度校验 {case.name}: {result.max_relative_error:.3e}（{result.elements_checked} 个元素）")
        outcomes.append(outcome)
    return outcomes


def raise_on_failure(outcomes: Sequence[GradCheckOutcome]):
    failed = [o for o in outcomes if not o.passed]
    if failed:
        worst = max(failed, key=lambda o: o.result.max_relative_error)
        raise GradientCheckError(
            f"{len(failed)} of {len(outcomes)} gradient checks failed: "
            f"{', '.join(o.name for o in failed)}; worst {worst.name} relative error "
            f"{worst.result.max_relative_error:.3e} at input {worst.result.input_index} "
            f"element {worst.result.element_index}")
