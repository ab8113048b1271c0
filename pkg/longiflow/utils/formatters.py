"""格式化工具（聊天回复文本）"""
from typing import Any, Dict, List, Sequence


class Formatters:
    """格式化工具类"""

    @staticmethod
    def format_percentage(value: float, precision: int = 2) -> str:
        """0~1 的比例格式化为百分比"""
        return f"{value * 100:.{precision}f}%"

    @staticmethod
    def format_artifacts(paths: Sequence[str], limit: int = 5) -> str:
        """列出写出的产物，超过 limit 个时折叠"""
        if not paths:
            return "📁 没有写出文件"
        lines = [f"📁 写出 {len(paths)} 个文件:"]
        lines.extend(f"  • {p}" for p in paths[:limit])
        if len(paths) > limit:
            lines.append(f"  … 其余 {len(paths) - limit} 个")
        return "\n".join(lines)

    @staticmethod
    def format_command_result(title: str, result: Dict[str, Any]) -> str:
        """命令结果：成功时列出产物，失败时给出错误类别"""
        if result["exit_code"] == 0:
            return f"✅ {title} 完成\n" + Formatters.format_artifacts(result.get("artifacts_written", []))
        return (f"❌ {title} 失败 (退出码 {result['exit_code']})\n"
                f"🔍 类型: {result.get('error_kind')}\n"
                f"💬 {result.get('message', '')}")

    @staticmethod
    def format_eval_report(report: Dict[str, Any], limit: int = 10) -> str:
        """格式化评估报告"""
        confusion = report.get("confusion", {})
        auc = report.get("auc")
        unit = "受试者" if report.get("per_subject") else "配对"
        lines = [
            f"📊 评估结果（按{unit}）",
            f"🎯 准确率: {Formatters.format_percentage(report['accuracy'])}",
            f"📈 AUC: {Formatters.format_percentage(auc) if auc is not None else '无定义（单一类别）'}",
            f"🧮 混淆矩阵: TP {confusion.get('true_positive', 0)} FP {confusion.get('false_positive', 0)} "
            f"TN {confusion.get('true_negative', 0)} FN {confusion.get('false_negative', 0)}",
        ]
        samples = report.get("per_sample", [])
        if samples:
            lines.append("\n📋 样本得分:")
            for entry in samples[:limit]:
                mark = "🟢" if (entry["score"] >= 0.5) == (entry["label"] == 1) else "🔴"
                lines.append(f"{mark} {entry['sample_id']}: {entry['score']:.4f} (标签 {entry['label']})")
            if len(samples) > limit:
                lines.append(f"… 共 {len(samples)} 个")
        return "\n".join(lines)

    @staticmethod
    def format_loss_history(losses: List[float], limit: int = 5) -> str:
        if not losses:
            return "📉 无损失记录"
        head = ", ".join(f"{v:.4f}" for v in losses[:limit])
        return (f"📉 损失: 首轮 {losses[0]:.4f} → 末轮 {losses[-1]:.4f}（{len(losses)} 轮）\n"
                f"   前 {min(limit, len(losses))} 轮: {head}")

    @staticmethod
    def format_gradcheck(outcomes: List[Dict[str, Any]]) -> str:
        """梯度自检结果"""
        passed = sum(1 for o in outcomes if o["passed"])
        lines = [f"🧪 梯度自检: {passed}/{len(outcomes)} 通过"]
        for o in outcomes:
            mark = "✅" if o["passed"] else "❌"
            lines.append(f"{mark} {o['name']}: {o['max_relative_error']:.2e} (阈值 {o['threshold']:.0e})")
        return "\n".join(lines)

    @staticmethod
    def format_help_message() -> str:
        """格式化帮助信息"""
        return """📖 LongiFlow 纵向分类 使用说明

🧪 数据:
/lf_synth [受试者数] [边长] - 生成两类合成体数据与清单
  例: /lf_synth 20 32

🌊 流场:
/lf_flow [optical_flow|registration] - 对清单中的配对预计算流场
  例: /lf_flow registration

🏋️ 训练与评估:
/lf_train [轮数] - 按插件配置训练，写出检查点与损失曲线
/lf_eval - 在测试受试者上评估准确率与 AUC
/lf_predict 扫描ID - 单个配对的得分与注意力采样点
  例: /lf_predict sub-003@1

🔧 自检:
/lf_gradcheck - 运行全部有限差分梯度校验

💡 提示:
• 所有超参数在插件配置中修改，命令行可用 python -m longiflow 批量运行
• 同一种子下所有产物逐字节可复现
• 每个输出目录都会写出 effective_config.json"""
