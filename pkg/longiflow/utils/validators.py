"""数据验证工具"""
import math
from typing import List, Optional, Sequence, Tuple

from .errors import UsageError

ValidationResult = Tuple[bool, str]

MIN_PHANTOM_SIZE = 16


class Validators:
    """数据验证器（返回 (是否有效, 错误信息)）"""

    @staticmethod
    def is_valid_label(label) -> bool:
        """标签必须是 0 或 1"""
        try:
            return int(label) in (0, 1) and float(label) == int(label)
        except (TypeError, ValueError):
            return False

    @staticmethod
    def is_finite_number(value) -> bool:
        try:
            return math.isfinite(float(value))
        except (TypeError, ValueError):
            return False

    @staticmethod
    def validate_same_shape(a: Sequence[int], b: Sequence[int], what: str) -> ValidationResult:
        if tuple(a) != tuple(b):
            return False, f"{what}: shape mismatch {tuple(a)} vs {tuple(b)}"
        return True, ""

    @staticmethod
    def validate_embedding_config(input_size: int, stage_channels: Sequence[int],
                                  factor: int, support_channels: int) -> ValidationResult:
        """嵌入配置：边长可被总下采样整除，阶段数与下采样倍数一致"""
        if input_size < 1 or factor < 1:
            return False, f"input_size and downsample factor must be positive, got {input_size} and {factor}"
        if input_size % factor != 0:
            return False, f"input_size {input_size} is not divisible by downsample factor {factor}"
        if not stage_channels or any(c < 1 for c in stage_channels):
            return False, f"stage_channels must be a non-empty list of positive ints, got {list(stage_channels)}"
        if 2 ** len(stage_channels) != factor:
            return False, (f"{len(stage_channels)} stride-2 stages give a downsample factor of "
                           f"{2 ** len(stage_channels)}, config says {factor}")
        if support_channels < 1:
            return False, f"support_channels must be positive, got {support_channels}"
        return True, ""

    @staticmethod
    def validate_querying_config(num_blocks: int, grid: Sequence[int], width: int,
                                 heads: int, offset_scale: float) -> ValidationResult:
        """查询配置：宽度可被头数整除，网格各维至少为 1，s > 0"""
        if num_blocks < 1:
            return False, f"number of querying blocks must be >= 1, got {num_blocks}"
        if len(grid) != 3 or any(g < 1 for g in grid):
            return False, f"query grid needs three extents >= 1, got {list(grid)}"
        if heads < 1 or width % heads != 0:
            return False, f"query width {width} is not divisible by {heads} heads"
        if not offset_scale > 0:
            return False, f"offset scale must be positive, got {offset_scale}"
        return True, ""

    @staticmethod
    def validate_train_config(lr: float, batch_size: int, epochs: int, dtype: str,
                              train_fraction: float) -> ValidationResult:
        if not lr >= 0:
            return False, f"learning rate must be non-negative, got {lr}"
        if batch_size < 1:
            return False, f"batch_size must be >= 1, got {batch_size}"
        if epochs < 0:
            return False, f"epochs must be >= 0, got {epochs}"
        if dtype not in ("float32", "float64"):
            return False, f"dtype must be float32 or float64, got {dtype}"
        if not 0.0 < train_fraction < 1.0:
            return False, f"train_fraction must lie in (0, 1), got {train_fraction}"
        return True, ""

    @staticmethod
    def validate_pairing(target_gap: float, dm_tolerance: float,
                         ds_window: Tuple[float, float]) -> ValidationResult:
        """配对窗口：目标间隔为正且落在 D_s 窗口内"""
        low, high = ds_window
        if not target_gap > 0:
            return False, f"target_gap must be positive, got {target_gap}"
        if dm_tolerance < 0:
            return False, f"dm_tolerance must be non-negative, got {dm_tolerance}"
        if not low <= target_gap <= high:
            return False, f"ds_window [{low}, {high}] does not contain target_gap {target_gap}"
        return True, ""

    @staticmethod
    def validate_flow_settings(alpha: float, hs_iters: int, demons_iters: int, smooth_sigma: float,
                               intensity_scale: float, presmooth_sigma: float) -> ValidationResult:
        if not alpha > 0:
            return False, f"hs_alpha must be positive, got {alpha}"
        if hs_iters < 1 or demons_iters < 1:
            return False, f"iteration counts must be >= 1, got hs={hs_iters} demons={demons_iters}"
        if smooth_sigma < 0 or presmooth_sigma < 0:
            return False, "smoothing sigmas must be non-negative"
        if not intensity_scale > 0:
            return False, f"hs_intensity_scale must be positive, got {intensity_scale}"
        return True, ""

    @staticmethod
    def validate_phantom_params(size: int, timepoints: Sequence[float]) -> ValidationResult:
        if size < MIN_PHANTOM_SIZE:
            return False, f"phantom size {size} is below the minimum of {MIN_PHANTOM_SIZE}"
        if not timepoints:
            return False, "at least one timepoint is required"
        if any(b <= a for a, b in zip(timepoints, timepoints[1:])):
            return False, f"timepoints must be strictly increasing, got {list(timepoints)}"
        return True, ""

    @staticmethod
    def parse_int_list(text, name: str = "value") -> List[int]:
        """解析 '4,8,16' 或列表"""
        if isinstance(text, (list, tuple)):
            return [int(v) for v in text]
        try:
            return [int(v) for v in str(text).replace(" ", "").split(",") if v != ""]
        except ValueError:
            raise UsageError(f"invalid integer list for {name}: {text!r}")

    @staticmethod
    def parse_float_list(text, name: str = "value") -> List[float]:
        """解析 '0,1' 或列表"""
        if isinstance(text, (list, tuple)):
            return [float(v) for v in text]
        try:
            return [float(v) for v in str(text).replace(" ", "").split(",") if v != ""]
        except ValueError:
            raise UsageError(f"invalid number list for {name}: {text!r}")

    @staticmethod
    def parse_bool(value, default: Optional[bool] = None) -> bool:
        if isinstance(value, bool):
            return value
        if value is None:
            return bool(default)
        return str(value).strip().lower() in ("1", "true", "yes", "on")
