"""数据存储工具

JSON、损失曲线 CSV 与检查点的读写。所有产物不含时间戳，相同输入得到逐字节相同的文件。
"""
import io
import json
import zipfile
from collections import OrderedDict
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from .errors import DataError
from .logger import logger

try:
    from astrbot.api.star import StarTools
except ImportError:
    StarTools = None

# zip 条目固定时间，保证检查点可复现
_ZIP_EPOCH = (1980, 1, 1, 0, 0, 0)
CHECKPOINT_META = "meta.json"
EFFECTIVE_CONFIG = "effective_config.json"


def _to_jsonable(value):
    if isinstance(value, dict):
        return {str(k): _to_jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_to_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.generic):
        return value.item()
    if hasattr(value, "value") and hasattr(value, "name"):   # Enum
        return value.value
    return value


class DataStorage:
    """产物目录管理器"""

    def __init__(self, data_dir: Union[str, Path, None] = None, plugin_name: str = "longiflow"):
        """初始化数据存储；未指定目录时使用 AstrBot 插件数据目录"""
        self.plugin_name = plugin_name
        if data_dir is None:
            data_dir = StarTools.get_data_dir(plugin_name) if StarTools is not None else Path.cwd()
        self.data_dir = Path(data_dir)

    def ensure_dir(self, sub: Optional[str] = None) -> Path:
        """确保目录存在"""
        target = self.data_dir / sub if sub else self.data_dir
        try:
            target.mkdir(parents=True, exist_ok=True)
        except OSError as e:
            logger.error(f"创建目录失败 {target}: {e}")
            raise DataError(f"cannot create output directory {target}: {e}")
        return target

    def path(self, filename: Union[str, Path]) -> Path:
        filename = Path(filename)
        return filename if filename.is_absolute() else self.data_dir / filename

    # JSON
    def save_json(self, filename: Union[str, Path], data: Any) -> Path:
        """保存JSON文件（键排序，无时间戳）"""
        file_path = self.path(filename)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        with open(file_path, "w", encoding="utf-8") as f:
            json.dump(_to_jsonable(data), f, ensure_ascii=False, indent=2, sort_keys=True)
            f.write("\n")
        return file_path

    def load_json(self, filename: Union[str, Path]) -> Any:
        """加载JSON文件"""
        file_path = self.path(filename)
        try:
            with open(file_path, "r", encoding="utf-8") as f:
                return json.load(f)
        except FileNotFoundError:
            raise DataError(f"file not found: {file_path}")
        except json.JSONDecodeError as e:
            logger.error(f"加载文件失败 {file_path}: {e}")
            raise DataError(f"invalid JSON in {file_path}: {e}")

    def save_effective_config(self, config: Dict[str, Any]) -> Path:
        """把生效配置回写到输出目录"""
        return self.save_json(EFFECTIVE_CONFIG, config)

    # 损失曲线
    def save_loss_history(self, filename: Union[str, Path], losses: Sequence[float]) -> Path:
        file_path = self.path(filename)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        frame = pd.DataFrame({"epoch": np.arange(1, len(losses) + 1, dtype=np.int64),
                              "mean_loss": np.asarray(losses, dtype=np.float64)})
        frame.to_csv(file_path, index=False, float_format="%.17g")
        return file_path

    def load_loss_history(self, filename: Union[str, Path]) -> List[float]:
        file_path = self.path(filename)
        try:
            frame = pd.read_csv(file_path, float_precision="round_trip")
        except FileNotFoundError:
            raise DataError(f"loss history not found: {file_path}")
        return frame["mean_loss"].astype(float).tolist()

    # 检查点
    def save_checkpoint(self, filename: Union[str, Path], arrays: "OrderedDict[str, np.ndarray]",
                        meta: Dict[str, Any]) -> Path:
        """检查点：命名数组的扁平容器 + 配置快照与种子

        zip 内每个数组一个 .npy 条目，顺序与参数枚举顺序一致。
        """
        file_path = self.path(filename)
        file_path.parent.mkdir(parents=True, exist_ok=True)
        names = list(arrays.keys())
        meta = dict(meta)
        meta["array_names"] = names
        with zipfile.ZipFile(file_path, "w", compression=zipfile.ZIP_DEFLATED) as zf:
            self._write_entry(zf, CHECKPOINT_META,
                              json.dumps(_to_jsonable(meta), ensure_ascii=False, indent=2, sort_keys=True).encode("utf-8"))
            for name in names:
                buffer = io.BytesIO()
                np.lib.format.write_array(buffer, np.ascontiguousarray(arrays[name]), allow_pickle=False)
                self._write_entry(zf, f"arrays/{name}.npy", buffer.getvalue())
        logger.info(f"检查点已保存: {file_path} ({len(names)} 个数组)")
        return file_path

    @staticmethod
    def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes):
        info = zipfile.ZipInfo(name, date_time=_ZIP_EPOCH)
        info.compress_type = zipfile.ZIP_DEFLATED
        info.external_attr = 0o644 << 16
        zf.writestr(info, payload)

    def load_checkpoint(self, filename: Union[str, Path]) -> Tuple["OrderedDict[str, np.ndarray]", Dict[str, Any]]:
        """读取检查点，返回 (数组, 元信息)"""
        file_path = self.path(filename)
        try:
            with zipfile.ZipFile(file_path, "r") as zf:
                meta = json.loads(zf.read(CHECKPOINT_META).decode("utf-8"))
                arrays = OrderedDict()
                for name in meta.get("array_names", []):
                    with zf.open(f"arrays/{name}.npy") as f:
                        arrays[name] = np.lib.format.read_array(io.BytesIO(f.read()), allow_pickle=False)
        except FileNotFoundError:
            raise DataError(f"checkpoint not found: {file_path}")
        except (zipfile.BadZipFile, KeyError, ValueError) as e:
            logger.error(f"加载检查点失败 {file_path}: {e}")
            raise DataError(f"corrupt checkpoint {file_path}: {e}")
        return arrays, meta
