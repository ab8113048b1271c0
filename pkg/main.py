"""LongiFlow 纵向分类插件
在聊天中驱动合成数据、流场预计算、训练、评估、预测与梯度自检
"""
import asyncio
from typing import Any, Dict, Optional

from astrbot.api.event import AstrMessageEvent, MessageEventResult, filter
from astrbot.api.star import Context, Star
from astrbot.api import logger

from .longiflow.handlers.command_handlers import (
    EvalCommandHandler, FlowCommandHandler, GradCheckCommandHandler, PredictCommandHandler,
    SynthCommandHandler, TrainCommandHandler,
)
from .longiflow.utils.config_store import ConfigStore
from .longiflow.utils.data_storage import DataStorage
from .longiflow.utils.errors import UsageError
from .longiflow.utils.formatters import Formatters


class LongiFlowPlugin(Star):
    """
    LongiFlow 纵向分类插件

    功能特点：
    - 🧪 两类合成纵向体数据
    - 🌊 Horn-Schunck 光流 / demons 配准预计算流场
    - 🏋️ 共享骨干嵌入 + 三维可变形查询 Transformer 训练
    - 📊 准确率、AUC 评估与注意力采样点导出
    - 🔧 有限差分梯度自检
    """

    def __init__(self, context: Context, config: dict = None):
        super().__init__(context, config)
        self.plugin_config = config or {}
        self.storage = DataStorage(plugin_name="longiflow")
        # 同一时间只跑一个批处理任务
        self._job_lock = asyncio.Lock()
        logger.info("LongiFlow 插件初始化完成")

    def _workspace(self, name: str) -> str:
        return str(self.storage.path(name))

    def _config(self, overrides: Optional[Dict[str, Any]] = None) -> ConfigStore:
        return ConfigStore(plugin_config=self.plugin_config, overrides=overrides)

    @staticmethod
    def _params(event: AstrMessageEvent):
        return event.message_str.strip().split()[1:]

    async def _run(self, title: str, handler_cls, overrides: Optional[Dict[str, Any]] = None, **params):
        """在工作线程里执行命令并格式化结果"""
        if self._job_lock.locked():
            return MessageEventResult().message("⏳ 已有任务在运行，请稍后再试")
        async with self._job_lock:
            try:
                handler = handler_cls(self._config(overrides))
            except UsageError as e:
                return MessageEventResult().message(f"❌ 配置错误: {e}")
            result = await asyncio.to_thread(handler.run, **params)
            text = Formatters.format_command_result(title, result.to_dict())
            if result.is_success() and "accuracy" in handler.details:
                text += "\n\n" + Formatters.format_eval_report(handler.details)
            if result.is_success() and "loss_history" in handler.details:
                text += "\n\n" + Formatters.format_loss_history(handler.details["loss_history"])
            if "outcomes" in handler.details:
                text += "\n\n" + Formatters.format_gradcheck(handler.details["outcomes"])
            return MessageEventResult().message(text)

    @filter.command("lf_synth")
    async def synth(self, event: AstrMessageEvent):
        """生成合成数据"""
        params = self._params(event)
        overrides = {}
        try:
            if params:
                overrides["phantom_subjects"] = int(params[0])
            if len(params) > 1:
                overrides["phantom_size"] = int(params[1])
        except ValueError:
            yield MessageEventResult().message("❌ 用法: /lf_synth [受试者数] [边长]")
            return
        yield await self._run("合成数据", SynthCommandHandler, overrides, out=self._workspace("data"))

    @filter.command("lf_flow")
    async def flow(self, event: AstrMessageEvent):
        """预计算流场"""
        params = self._params(event)
        overrides = {"flow_method": params[0]} if params else {}
        yield await self._run("流场预计算", FlowCommandHandler, overrides,
                              manifest=self._workspace("data/manifest.csv"), out=self._workspace("flows"))

    @filter.command("lf_train")
    async def train(self, event: AstrMessageEvent):
        """训练"""
        params = self._params(event)
        overrides = {}
        if params:
            if not params[0].isdigit():
                yield MessageEventResult().message("❌ 用法: /lf_train [轮数]")
                return
            overrides["epochs"] = int(params[0])
        yield await self._run("训练", TrainCommandHandler, overrides,
                              pairs_dir=self._workspace("flows"), out=self._workspace("train"))

    @filter.command("lf_eval")
    async def evaluate(self, event: AstrMessageEvent):
        """评估测试受试者"""
        yield await self._run("评估", EvalCommandHandler, None, pairs_dir=self._workspace("flows"),
                              checkpoint_dir=self._workspace("train"), out=self._workspace("eval"))

    @filter.command("lf_predict")
    async def predict(self, event: AstrMessageEvent):
        """单个配对的得分与注意力采样点"""
        params = self._params(event)
        if not params:
            yield MessageEventResult().message("❌ 用法: /lf_predict 扫描ID（如 sub-003@1）")
            return
        yield await self._run("预测", PredictCommandHandler, None, pairs_dir=self._workspace("flows"),
                              checkpoint_dir=self._workspace("train"), out=self._workspace("predict"),
                              sample_ids=params, attention=True)

    @filter.command("lf_gradcheck")
    async def gradcheck(self, event: AstrMessageEvent):
        """梯度自检"""
        yield await self._run("梯度自检", GradCheckCommandHandler, None, out=self._workspace("gradcheck"))

    @filter.command("lf_help")
    async def show_help(self, event: AstrMessageEvent):
        """显示帮助"""
        yield MessageEventResult().message(Formatters.format_help_message())

    async def terminate(self):
        """插件销毁（AstrBot生命周期方法）"""
        logger.info("LongiFlow 插件已停止")
