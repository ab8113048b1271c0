"""配置管理

优先级：_conf_schema.json 默认值 < AstrBot 插件配置或 --config 文件 < 命令行参数。
"""
import json
import os
from pathlib import Path
from typing import Any, Dict, Mapping, Optional, Union

from ..models.model_config import (
    EmbeddingConfig, FlowSettings, PairingSettings, PhantomSettings, QueryingConfig, TrainConfig,
)
from .errors import UsageError
from .logger import logger
from .validators import Validators

SCHEMA_PATH = Path(__file__).resolve().parents[2] / "_conf_schema.json"
THREADS_ENV = "LONGIFLOW_THREADS"


def load_schema(path: Union[str, Path] = SCHEMA_PATH) -> Dict[str, Dict[str, Any]]:
    with open(path, "r", encoding="utf-8") as f:
        return json.load(f)


class ConfigStore:
    """分层配置"""

    def __init__(self, plugin_config: Optional[Mapping[str, Any]] = None,
                 overrides: Optional[Mapping[str, Any]] = None,
                 schema: Optional[Dict[str, Dict[str, Any]]] = None):
        self.schema = schema if schema is not None else load_schema()
        self._values: Dict[str, Any] = {key: entry.get("default") for key, entry in self.schema.items()}
        env_threads = os.environ.get(THREADS_ENV)
        if env_threads:
            self._values["threads"] = env_threads
        if plugin_config:
            self.update(plugin_config)
        if overrides:
            self.update(overrides)

    @classmethod
    def from_file(cls, path: Union[str, Path, None], overrides: Optional[Mapping[str, Any]] = None) -> "ConfigStore":
        """从 JSON 配置文件加载"""
        file_values: Dict[str, Any] = {}
        if path:
            try:
                with open(path, "r", encoding="utf-8") as f:
                    file_values = json.load(f)
            except FileNotFoundError:
                raise UsageError(f"config file not found: {path}")
            except json.JSONDecodeError as e:
                raise UsageError(f"config file {path} is not valid JSON: {e}")
            if not isinstance(file_values, dict):
                raise UsageError(f"config file {path} must contain a JSON object")
        return cls(plugin_config=file_values, overrides=overrides)

    def update(self, values: Mapping[str, Any]):
        for key, value in values.items():
            if value is None:
                continue
            if key not in self.schema:
                logger.warning(f"忽略未知配置项: {key}")
                continue
            self._values[key] = value

    def get(self, key: str, default=None):
        """获取配置值（按 schema 类型转换）"""
        if key not in self._values:
            return default
        value = self._values[key]
        if value is None:
            return default
        return self._coerce(key, value)

    def _coerce(self, key: str, value: Any) -> Any:
        kind = self.schema.get(key, {}).get("type", "string")
        try:
            if kind == "int":
                if isinstance(value, float) and not value.is_integer():
                    raise ValueError(value)
                return int(value)
            if kind == "float":
                return float(value)
            if kind == "bool":
                return Validators.parse_bool(value)
        except (TypeError, ValueError):
            raise UsageError(f"config key {key} expects {kind}, got {value!r}")
        options = self.schema.get(key, {}).get("options")
        if options and str(value) not in options:
            raise UsageError(f"config key {key} must be one of {options}, got {value!r}")
        return value

    def as_dict(self) -> Dict[str, Any]:
        """生效配置快照"""
        return {key: self.get(key) for key in sorted(self._values)}

    # 类型化配置
    def embedding_config(self) -> EmbeddingConfig:
        return EmbeddingConfig(
            input_size=self.get("input_size"),
            stage_channels=Validators.parse_int_list(self.get("stage_channels"), "stage_channels"),
            downsample_factor_total=self.get("downsample_factor_total"),
            support_channels=self.get("support_channels"),
            mode=self.get("embedding_mode"),
            dense_layers=self.get("dense_layers"),
            growth_rate=self.get("growth_rate"),
            backbone_kind=self.get("backbone_kind"),
        )

    def querying_config(self) -> QueryingConfig:
        grid = Validators.parse_int_list(self.get("query_grid"), "query_grid")
        if len(grid) != 3:
            raise UsageError(f"query_grid needs three extents, got {grid}")
        return QueryingConfig(
            num_blocks=self.get("num_blocks"),
            grid=tuple(grid),
            width=self.get("query_width"),
            heads=self.get("heads"),
            ffn_hidden=self.get("ffn_hidden") or None,
            offset_scale=self.get("offset_scale"),
            per_head_offsets=self.get("per_head_offsets"),
            use_querying=self.get("use_querying"),
        )

    def train_config(self) -> TrainConfig:
        return TrainConfig(
            lr=self.get("lr"),
            beta1=self.get("beta1"),
            beta2=self.get("beta2"),
            epsilon=self.get("adam_epsilon"),
            epochs=self.get("epochs"),
            batch_size=self.get("batch_size"),
            seed=self.get("seed"),
            mode=self.get("embedding_mode"),
            flow_method=self.get("flow_method"),
            save_interval=self.get("save_interval"),
            dtype=self.get("dtype"),
            zscore_inputs=self.get("zscore_inputs"),
            per_subject=self.get("per_subject"),
            train_fraction=self.get("train_fraction"),
        )

    def flow_settings(self) -> FlowSettings:
        return FlowSettings(
            method=self.get("flow_method"),
            hs_alpha=self.get("hs_alpha"),
            hs_iters=self.get("hs_iters"),
            hs_intensity_scale=self.get("hs_intensity_scale"),
            hs_presmooth_sigma=self.get("hs_presmooth_sigma"),
            demons_iters=self.get("demons_iters"),
            demons_smooth_sigma=self.get("demons_smooth_sigma"),
        )

    def pairing_settings(self) -> PairingSettings:
        return PairingSettings(
            target_gap=self.get("target_gap"),
            dm_tolerance=self.get("dm_tolerance"),
            ds_window=(self.get("ds_window_min"), self.get("ds_window_max")),
        )

    def phantom_settings(self) -> PhantomSettings:
        return PhantomSettings(
            subjects=self.get("phantom_subjects"),
            size=self.get("phantom_size"),
            timepoints=Validators.parse_float_list(self.get("phantom_timepoints"), "timepoints"),
            atrophy_rate=self.get("phantom_atrophy_rate"),
            noise_std=self.get("phantom_noise_std"),
            seed=self.get("seed"),
        )
