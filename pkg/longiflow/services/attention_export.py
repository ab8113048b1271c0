"""导出可变形交叉注意力的采样点"""
from pathlib import Path
from typing import Any, Dict, Tuple, Union

from ..models.sample import PairSample
from ..utils.data_storage import DataStorage
from ..utils.errors import UsageError
from ..utils.logger import logger
from .longitudinal_model import LongitudinalClassifier
from .trainer import score


def attention_dump(model: LongitudinalClassifier, sample: PairSample) -> Tuple[float, Dict[str, Any]]:
    """前向一次并收集每块每头的形变采样点，返回 (得分, 可序列化字典)"""
    if not model.uses_querying:
        raise UsageError("attention export needs the querying module (use_querying=true)")
    trace = model.new_trace()
    value = score(model, sample, trace)
    payload = trace.to_dict()
    payload.update({
        "sample_id": sample.sample_id,
        "subject_id": sample.subject_id,
        "pair_kind": sample.pair_kind.value,
        "score": value,
        "num_queries": model.querying_config.num_queries,
    })
    return value, payload


def write_attention(payload: Dict[str, Any], path: Union[str, Path]) -> Path:
    path = Path(path)
    written = DataStorage(path.parent).save_json(path.name, payload)
    logger.info(f"注意力采样点已导出: {written}（{len(payload['blocks'])} 个查询块）")
    return written


def export_attention(model: LongitudinalClassifier, sample: PairSample, path: Union[str, Path]) -> Path:
    _, payload = attention_dump(model, sample)
    return write_attention(payload, path)
