"""命令基类 - 抽取公共的配置读取、输出目录准备与错误映射逻辑"""
from abc import ABC, abstractmethod
from pathlib import Path
from typing import Any, Dict, List, Optional, Union

from ..models.report import CommandResult
from ..utils.config_store import ConfigStore
from ..utils.data_storage import DataStorage
from ..utils.errors import LongiFlowError
from ..utils.logger import logger


def error_result(error: BaseException) -> CommandResult:
    """异常 -> 带退出码的命令结果；OSError 视为数据错误"""
    exit_code = error.exit_code if isinstance(error, LongiFlowError) else 2
    return CommandResult(exit_code=exit_code, error_kind=type(error).__name__, message=str(error))


class BaseCommandHandler(ABC):
    """
    批处理命令基类
    子类实现 execute()，返回写出的产物路径；run() 负责把异常翻译成 CommandResult
    """

    command_name = "command"

    def __init__(self, config: ConfigStore):
        self.config = config
        self.details: Dict[str, Any] = {}
        self.effective_config_path: Optional[Path] = None
        self._action_description = "命令"

    def set_action_description(self, description: str):
        """设置操作描述（用于日志）"""
        self._action_description = description

    def run(self, **params) -> CommandResult:
        """模板方法：执行命令并映射错误"""
        self.details = {}
        try:
            artifacts = self.execute(**params)
        except (LongiFlowError, OSError) as e:
            logger.error(f"{self._action_description}失败: {type(e).__name__}: {e}")
            return error_result(e)
        logger.info(f"{self._action_description}完成，写出 {len(artifacts)} 个文件")
        return CommandResult(exit_code=0, artifacts_written=[str(p) for p in artifacts])

    @abstractmethod
    def execute(self, **params) -> List[Path]:
        """
        执行具体命令（由子类实现）

        Returns:
            写出的文件路径列表
        """
        pass

    def prepare_output(self, out_dir: Union[str, Path], arguments: Optional[Dict[str, Any]] = None) -> DataStorage:
        """创建输出目录并写出生效配置"""
        storage = DataStorage(out_dir)
        storage.ensure_dir()
        self.effective_config_path = storage.save_effective_config({
            "command": self.command_name,
            "arguments": {k: (None if v is None else str(v) if isinstance(v, Path) else v)
                          for k, v in sorted((arguments or {}).items())},
            "config": self.config.as_dict(),
        })
        return storage
