"""体数据与流场文件读写

负载为小端 32 位浮点、行优先的原始字节；同名 .json 附属文件记录 dims 等元信息。
体数据形状 (D,H,W)，流场形状 (3,D,H,W)，两者的 dims 都只记录空间维。
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np

from ..models.flow import FlowField
from .errors import DataError
from .logger import logger

PAYLOAD_DTYPE = np.dtype("<f4")

PathLike = Union[str, os.PathLike]


def sidecar_path(path: PathLike) -> Path:
    """附属文件路径：同名换成 .json 后缀"""
    return Path(path).with_suffix(".json")


def _read_sidecar(path: PathLike) -> Dict[str, Any]:
    meta_path = sidecar_path(path)
    try:
        with open(meta_path, "r", encoding="utf-8") as f:
            meta = json.load(f)
    except FileNotFoundError:
        raise DataError(f"sidecar not found: {meta_path}")
    except (OSError, json.JSONDecodeError) as e:
        raise DataError(f"unreadable sidecar {meta_path}: {e}")
    dims = meta.get("dims") if isinstance(meta, dict) else None
    if not isinstance(dims, list) or len(dims) != 3 or any(not isinstance(d, int) or d < 1 for d in dims):
        raise DataError(f"sidecar {meta_path} needs 'dims' as three positive integers, got {dims!r}")
    return meta


def _write_payload(path: PathLike, array: np.ndarray, meta: Dict[str, Any]):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = np.ascontiguousarray(array, dtype=PAYLOAD_DTYPE)
    with open(path, "wb") as f:
        f.write(payload.tobytes(order="C"))
    with open(sidecar_path(path), "w", encoding="utf-8") as f:
        json.dump(meta, f, ensure_ascii=False, indent=2, sort_keys=True)


def _read_payload(path: PathLike, shape: Tuple[int, ...]) -> np.ndarray:
    expected = int(np.prod(shape)) * PAYLOAD_DTYPE.itemsize
    try:
        raw = Path(path).read_bytes()
    except FileNotFoundError:
        raise DataError(f"volume file not found: {path}")
    except OSError as e:
        raise DataError(f"cannot read {path}: {e}")
    if len(raw) != expected:
        raise DataError(f"{path}: expected {expected} bytes for shape {shape}, found {len(raw)} bytes")
    return np.frombuffer(raw, dtype=PAYLOAD_DTYPE).reshape(shape).copy()


def write_volume(path: PathLike, volume: np.ndarray, subject_id: str = "", t_years: Optional[float] = None,
                 spacing: Tuple[float, float, float] = (1.0, 1.0, 1.0)) -> Path:
    """写出 (D,H,W) 体数据及附属文件"""
    volume = np.asarray(volume)
    if volume.ndim != 3:
        raise DataError(f"write_volume expects a (D,H,W) array, got shape {volume.shape}")
    meta = {
        "dims": [int(n) for n in volume.shape],
        "spacing": [float(s) for s in spacing],
        "subject_id": subject_id,
        "t_years": t_years,
    }
    _write_payload(path, volume, meta)
    return Path(path)


def read_volume(path: PathLike) -> np.ndarray:
    """读取 (D,H,W) float32 体数据"""
    meta = _read_sidecar(path)
    return _read_payload(path, tuple(meta["dims"]))


def read_volume_meta(path: PathLike) -> Dict[str, Any]:
    return _read_sidecar(path)


def write_flow(path: PathLike, flow: FlowField) -> Path:
    """写出 (3,D,H,W) 流场及附属文件"""
    if flow.vectors.ndim != 4 or flow.vectors.shape[0] != 3:
        raise DataError(f"flow vectors must have shape (3,D,H,W), got {flow.vectors.shape}")
    _write_payload(path, flow.vectors, flow.sidecar())
    logger.debug(f"流场已写入: {path}")
    return Path(path)


def read_flow(path: PathLike) -> FlowField:
    meta = _read_sidecar(path)
    method = meta.get("method")
    if method is None:
        raise DataError(f"flow sidecar {sidecar_path(path)} has no 'method'")
    vectors = _read_payload(path, (3,) + tuple(meta["dims"]))
    try:
        return FlowField(vectors=vectors, method=method, source_gap_years=meta.get("source_gap_years"),
                         subject_id=meta.get("subject_id", ""), t_curr=meta.get("t_curr"),
                         t_prior=meta.get("t_prior"))
    except ValueError as e:
        raise DataError(f"flow sidecar {sidecar_path(path)}: {e}")
