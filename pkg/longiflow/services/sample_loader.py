"""把配对记录加载为内存中的训练样本"""
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Union

import numpy as np

from ..models.model_config import EmbeddingMode
from ..models.sample import PairSample
from ..models.scan import PairRecord
from ..utils.errors import DataError
from ..utils.volume_io import read_flow, read_volume


def zscore(volume: np.ndarray) -> np.ndarray:
    """零均值单位方差；常数体数据只去均值"""
    volume = np.asarray(volume, dtype=np.float64)
    centered = volume - volume.mean()
    std = centered.std()
    return centered / std if std > 0 else centered


class SampleLoader:
    """读取体数据与流场（带缓存）"""

    def __init__(self, manifest_dir: Union[str, Path], flow_dir: Union[str, Path, None] = None,
                 mode: EmbeddingMode = EmbeddingMode.FLOW, zscore_inputs: bool = True, dtype=np.float32):
        self.manifest_dir = Path(manifest_dir)
        self.flow_dir = Path(flow_dir) if flow_dir is not None else None
        self.mode = EmbeddingMode(mode) if isinstance(mode, str) else mode
        self.zscore_inputs = zscore_inputs
        self.dtype = np.dtype(dtype)
        self._cache: Dict[str, PairSample] = {}

    def _volume(self, relpath: str) -> np.ndarray:
        volume = read_volume(self.manifest_dir / relpath)
        if self.zscore_inputs:
            volume = zscore(volume)
        return volume.astype(self.dtype)

    def load(self, pair: PairRecord) -> PairSample:
        key = pair.sample_id
        if key in self._cache:
            return self._cache[key]
        flow: Optional[np.ndarray] = None
        prior: Optional[np.ndarray] = None
        if self.mode == EmbeddingMode.FLOW and pair.needs_flow():
            if not pair.flow_path or self.flow_dir is None:
                raise DataError(f"pair {key} ({pair.pair_kind.value}) needs a precomputed flow but has none")
            flow = read_flow(self.flow_dir / pair.flow_path).vectors.astype(self.dtype)
        if self.mode == EmbeddingMode.PRIOR_IMAGE and pair.prior is not None:
            prior = self._volume(pair.prior.volume_path)
        sample = PairSample(
            sample_id=key,
            subject_id=pair.current.subject_id,
            label=pair.current.label,
            current=self._volume(pair.current.volume_path),
            pair_kind=pair.pair_kind,
            flow=flow,
            prior=prior,
            t_curr=pair.current.t,
            t_prior=pair.prior.t if pair.prior is not None else None,
        )
        self._cache[key] = sample
        return sample

    def load_all(self, pairs: Sequence[PairRecord]) -> List[PairSample]:
        return [self.load(p) for p in pairs]
