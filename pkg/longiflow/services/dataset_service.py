"""数据集服务：清单读取、D_m/D_s 配对、按受试者划分"""
import math
import os
from collections import defaultdict
from pathlib import Path
from typing import Dict, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from ..models.model_config import PairingSettings
from ..models.scan import PairKind, PairRecord, ScanRecord
from ..utils.data_storage import DataStorage
from ..utils.errors import DataError
from ..utils.logger import logger
from ..utils.validators import Validators

MANIFEST_COLUMNS = ["subject_id", "t_years", "label", "volume_path"]
PAIR_INDEX = "pairs.json"
# 间隔比较的浮点容差
_GAP_EPS = 1e-9


def load_manifest(path: Union[str, Path], check_files: bool = True) -> List[ScanRecord]:
    """读取清单 CSV（subject_id,t_years,label,volume_path），路径相对清单目录

    行号按文件行计（表头为第 1 行）。
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype={"subject_id": str, "volume_path": str}, skip_blank_lines=True)
    except FileNotFoundError:
        raise DataError(f"manifest not found: {path}")
    except pd.errors.EmptyDataError:
        logger.warning(f"清单为空: {path}")
        return []
    except pd.errors.ParserError as e:
        raise DataError(f"cannot parse manifest {path}: {e}")

    missing = [c for c in MANIFEST_COLUMNS if c not in frame.columns]
    if missing:
        raise DataError(f"manifest {path} is missing columns: {', '.join(missing)}")
    if frame.empty:
        logger.warning(f"清单没有数据行: {path}")
        return []

    base = path.parent
    records: List[ScanRecord] = []
    seen: Dict[Tuple[str, float], int] = {}
    first_labels: Dict[str, Tuple[int, int]] = {}
    for idx, row in enumerate(frame.itertuples(index=False)):
        line = idx + 2
        subject_id = str(row.subject_id).strip()
        if not subject_id or subject_id == "nan":
            raise DataError(f"{path}:{line}: empty subject_id")
        if not Validators.is_finite_number(row.t_years):
            raise DataError(f"{path}:{line}: t_years must be a finite number, got {row.t_years!r}")
        if not Validators.is_valid_label(row.label):
            raise DataError(f"{path}:{line}: label must be 0 or 1, got {row.label!r}")
        t = float(row.t_years)
        label = int(row.label)

        key = (subject_id, t)
        if key in seen:
            raise DataError(f"{path}:{line}: duplicate scan time t={t:g} for subject {subject_id} "
                            f"(first seen at line {seen[key]})")
        seen[key] = line

        if subject_id in first_labels and first_labels[subject_id][0] != label:
            first_label, first_line = first_labels[subject_id]
            raise DataError(f"{path}:{line}: inconsistent label for subject {subject_id}: "
                            f"{label} here, {first_label} at line {first_line}")
        first_labels.setdefault(subject_id, (label, line))

        volume_path = str(row.volume_path).strip()
        if check_files and not (base / volume_path).is_file():
            raise DataError(f"{path}:{line}: missing volume file {volume_path}")
        records.append(ScanRecord(subject_id=subject_id, t=t, volume_path=volume_path, label=label))

    logger.info(f"清单加载完成: {len(records)} 条扫描, {len(first_labels)} 个受试者")
    return records


def save_manifest(path: Union[str, Path], records: Sequence[ScanRecord]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    frame = pd.DataFrame([{"subject_id": r.subject_id, "t_years": r.t, "label": r.label,
                           "volume_path": r.volume_path} for r in records], columns=MANIFEST_COLUMNS)
    frame.to_csv(path, index=False, float_format="%.17g")
    return path


def _group_by_subject(records: Iterable[ScanRecord]) -> Dict[str, List[ScanRecord]]:
    groups: Dict[str, List[ScanRecord]] = defaultdict(list)
    for record in records:
        groups[record.subject_id].append(record)
    return groups


def select_prior(current: ScanRecord, candidates: Sequence[ScanRecord], target_gap: float,
                 ds_window: Tuple[float, float]) -> Optional[ScanRecord]:
    """窗口内间隔最接近目标的先前扫描，平局取更早的扫描"""
    low, high = ds_window
    in_window = []
    for other in candidates:
        gap = current.t - other.t
        if gap > 0 and low - _GAP_EPS <= gap <= high + _GAP_EPS:
            in_window.append((abs(gap - target_gap), other.t, other))
    if not in_window:
        return None
    in_window.sort(key=lambda item: (item[0], item[1]))
    return in_window[0][2]


def build_pairs(records: Sequence[ScanRecord], target_gap: float = 1.0, dm_tolerance: float = 0.25,
                ds_window: Tuple[float, float] = (0.25, 1.75)) -> List[PairRecord]:
    """每条扫描恰好作为一次当前扫描，输出顺序与输入一致"""
    settings = PairingSettings(target_gap=target_gap, dm_tolerance=dm_tolerance, ds_window=ds_window)
    groups = _group_by_subject(records)
    pairs: List[PairRecord] = []
    for current in records:
        prior = select_prior(current, groups[current.subject_id], settings.target_gap, settings.ds_window)
        if prior is None:
            pairs.append(PairRecord(current=current, pair_kind=PairKind.SINGLE_EMPTY))
            continue
        gap = current.t - prior.t
        kind = PairKind.MULTI if abs(gap - settings.target_gap) <= settings.dm_tolerance + _GAP_EPS \
            else PairKind.SINGLE_SCALED
        pairs.append(PairRecord(current=current, pair_kind=kind, prior=prior))
    counts = {kind.value: sum(p.pair_kind == kind for p in pairs) for kind in PairKind}
    logger.info(f"配对完成: {len(pairs)} 条 {counts}")
    return pairs


def subject_labels(records: Iterable[ScanRecord]) -> Dict[str, int]:
    return {r.subject_id: r.label for r in records}


def subject_split(records: Sequence[ScanRecord], train_fraction: float = 0.8,
                  seed: int = 0) -> Tuple[List[str], List[str]]:
    """按受试者分层划分，返回 (训练受试者, 测试受试者)，各自排序"""
    labels = subject_labels(records)
    train: List[str] = []
    test: List[str] = []
    rng = np.random.default_rng(seed)
    for label in (0, 1):
        ids = sorted(s for s, l in labels.items() if l == label)
        if len(ids) < 2:
            raise DataError(f"class {label} has {len(ids)} subject(s); at least 2 are needed for a split")
        n_train = int(math.floor(len(ids) * train_fraction + 0.5))
        n_train = min(max(n_train, 1), len(ids) - 1)
        order = rng.permutation(len(ids))
        train.extend(ids[i] for i in order[:n_train])
        test.extend(ids[i] for i in order[n_train:])
    return sorted(train), sorted(test)


def filter_pairs(pairs: Sequence[PairRecord], subjects: Iterable[str]) -> List[PairRecord]:
    wanted = set(subjects)
    return [p for p in pairs if p.current.subject_id in wanted]


class DatasetService:
    """清单目录下的配对索引读写"""

    def __init__(self, storage: DataStorage):
        self.storage = storage

    def save_pair_index(self, pairs: Sequence[PairRecord], manifest_path: Union[str, Path],
                        extra: Optional[dict] = None) -> Path:
        """配对索引：每条扫描一项，记录 pair_kind 与流场路径（相对索引目录）"""
        payload = {
            "manifest": os.path.relpath(Path(manifest_path).resolve(), self.storage.data_dir.resolve()),
            "pairs": [p.to_dict() for p in pairs],
        }
        if extra:
            payload.update(extra)
        return self.storage.save_json(PAIR_INDEX, payload)

    def load_pair_index(self, filename: Union[str, Path] = PAIR_INDEX) -> Tuple[List[PairRecord], Path]:
        """返回 (配对列表, 清单路径)"""
        data = self.storage.load_json(filename)
        try:
            pairs = [PairRecord.from_dict(item) for item in data["pairs"]]
            manifest = self.storage.path(data["manifest"])
        except (KeyError, TypeError, ValueError) as e:
            raise DataError(f"invalid pair index {self.storage.path(filename)}: {e}")
        return pairs, manifest
