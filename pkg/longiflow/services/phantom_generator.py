"""合成纵向体数据

软边椭球外壳（皮层类比）包着一个暗腔（脑室类比）。每个受试者的基线几何随机抖动，
单个时间点上两类高度重叠；阳性类别随时间腔体扩大、外壳收缩，阴性类别几何不变。
"""
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from scipy.ndimage import gaussian_filter

from ..models.model_config import PhantomSettings
from ..models.scan import ScanRecord
from ..utils.errors import UsageError
from ..utils.validators import Validators

EDGE_WIDTH = 0.06           # 软边宽度（归一化半径单位）
BRAIN_INTENSITY = 0.8
CAVITY_CONTRAST = 0.9
SHELL_SHRINK = 0.25         # 外壳收缩速率相对腔体扩张速率的比例
BLUR_SIGMA = 0.7


@dataclass
class Anatomy:
    """单个受试者的基线几何"""
    center: np.ndarray          # (3,) 体素坐标
    outer_radii: np.ndarray     # (3,) 体素
    cavity_radii: np.ndarray    # (3,) 体素
    cavity_offset: np.ndarray   # (3,) 腔体中心相对偏移


def _sigmoid(x: np.ndarray) -> np.ndarray:
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def subject_id_for(index: int) -> str:
    return f"sub-{index:03d}"


def volume_relpath(subject_id: str, t: float) -> str:
    return f"volumes/{subject_id}_t{t:g}.raw"


class PhantomGenerator:
    """合成数据生成器"""

    def __init__(self, size: int = 32, atrophy_rate: float = 0.1, noise_std: float = 0.005):
        self.size = int(size)
        self.atrophy_rate = float(atrophy_rate)
        self.noise_std = float(noise_std)
        self._grid = np.stack(np.indices((self.size,) * 3), axis=0).astype(np.float64)

    def sample_anatomy(self, rng: np.random.Generator) -> Anatomy:
        n = self.size
        center = (n - 1) / 2.0 + rng.uniform(-0.03, 0.03, size=3) * n
        outer = n * (0.36 + rng.uniform(-0.03, 0.03, size=3))
        fraction = rng.uniform(0.22, 0.38)
        cavity = outer * fraction * (1.0 + rng.uniform(-0.08, 0.08, size=3))
        offset = rng.uniform(-0.04, 0.04, size=3) * n
        return Anatomy(center=center, outer_radii=outer, cavity_radii=cavity, cavity_offset=offset)

    def _radius(self, center: np.ndarray, radii: np.ndarray) -> np.ndarray:
        """椭球归一化半径 ρ，ρ<1 在内部"""
        rel = (self._grid - center[:, None, None, None]) / radii[:, None, None, None]
        return np.sqrt((rel ** 2).sum(axis=0))

    def geometry_at(self, anatomy: Anatomy, class_label: int, elapsed: float) -> Tuple[np.ndarray, np.ndarray]:
        """elapsed 年后的 (外壳半径, 腔体半径)"""
        if class_label == 1:
            growth = self.atrophy_rate * elapsed
            return anatomy.outer_radii * (1.0 - SHELL_SHRINK * growth), anatomy.cavity_radii * (1.0 + growth)
        return anatomy.outer_radii, anatomy.cavity_radii

    def noiseless(self, anatomy: Anatomy, class_label: int, elapsed: float) -> np.ndarray:
        outer_r, cavity_r = self.geometry_at(anatomy, class_label, elapsed)
        shell = _sigmoid((1.0 - self._radius(anatomy.center, outer_r)) / EDGE_WIDTH)
        cavity = _sigmoid((1.0 - self._radius(anatomy.center + anatomy.cavity_offset, cavity_r)) / EDGE_WIDTH)
        volume = BRAIN_INTENSITY * shell * (1.0 - CAVITY_CONTRAST * cavity)
        return gaussian_filter(volume, BLUR_SIGMA, mode="nearest")

    def cavity_mask(self, anatomy: Anatomy, class_label: int, elapsed: float) -> np.ndarray:
        """无噪声腔体掩码（ρ<1）"""
        _, cavity_r = self.geometry_at(anatomy, class_label, elapsed)
        return self._radius(anatomy.center + anatomy.cavity_offset, cavity_r) < 1.0

    def subject(self, class_label: int, seed, timepoints: Sequence[float],
                subject_id: str = "sub-000") -> List[Tuple[ScanRecord, np.ndarray]]:
        """生成一个受试者的全部扫描"""
        if not Validators.is_valid_label(class_label):
            raise UsageError(f"class label must be 0 or 1, got {class_label}")
        ok, msg = Validators.validate_phantom_params(self.size, list(timepoints))
        if not ok:
            raise UsageError(msg)
        rng = np.random.default_rng(seed)
        anatomy = self.sample_anatomy(rng)
        start = float(timepoints[0])
        scans = []
        for t in timepoints:
            clean = self.noiseless(anatomy, int(class_label), float(t) - start)
            noisy = clean + rng.normal(0.0, self.noise_std, size=clean.shape) if self.noise_std > 0 else clean
            record = ScanRecord(subject_id=subject_id, t=float(t),
                                volume_path=volume_relpath(subject_id, float(t)), label=int(class_label))
            scans.append((record, noisy.astype(np.float32)))
        return scans

    def dataset(self, subjects: int, timepoints: Sequence[float], seed: int) -> List[Tuple[ScanRecord, np.ndarray]]:
        """两类均衡的数据集，受试者 i 的标签为 i % 2"""
        scans = []
        for index in range(subjects):
            subject_seed = np.random.SeedSequence([int(seed), index])
            scans.extend(self.subject(index % 2, subject_seed, timepoints, subject_id_for(index)))
        return scans

    @classmethod
    def from_settings(cls, settings: PhantomSettings) -> "PhantomGenerator":
        return cls(size=settings.size, atrophy_rate=settings.atrophy_rate, noise_std=settings.noise_std)


def gen_phantom(class_label: int, seed, size: int = 32, timepoints: Sequence[float] = (0.0, 1.0),
                atrophy_rate: float = 0.1, noise_std: float = 0.005,
                subject_id: str = "sub-000") -> List[Tuple[ScanRecord, np.ndarray]]:
    """单个受试者的合成扫描序列"""
    generator = PhantomGenerator(size=size, atrophy_rate=atrophy_rate, noise_std=noise_std)
    return generator.subject(class_label, seed, list(timepoints), subject_id)
