from longiflow.models.report import CommandResult, EvalReport, SampleScore
from longiflow.utils.formatters import Formatters


class TestFormatters:
    def test_success_lists_artifacts(self):
        result = CommandResult(exit_code=0, artifacts_written=[f"out/{i}.raw" for i in range(7)])
        text = Formatters.format_command_result("合成数据", result.to_dict())
        assert text.startswith("✅ 合成数据 完成")
        assert "写出 7 个文件" in text
        assert "其余 2 个" in text

    def test_failure_shows_error_kind(self):
        result = CommandResult(exit_code=2, error_kind="DataError", message="file not found: m.csv")
        text = Formatters.format_command_result("流场预计算", result.to_dict())
        assert "退出码 2" in text and "DataError" in text and "m.csv" in text

    def test_eval_report(self):
        report = EvalReport(accuracy=0.75, auc=None, true_positive=3, true_negative=0, false_positive=1,
                            per_sample=[SampleScore("sub-000@1", 0.5, 1), SampleScore("sub-001@1", 0.5, 0)])
        text = Formatters.format_eval_report(report.to_dict())
        assert "75.00%" in text
        assert "无定义" in text
        assert "🟢 sub-000@1" in text and "🔴 sub-001@1" in text

    def test_loss_history(self):
        assert "3 轮" in Formatters.format_loss_history([0.7, 0.5, 0.3])
        assert Formatters.format_loss_history([]) == "📉 无损失记录"

    def test_gradcheck(self):
        outcomes = [{"name": "linear", "passed": True, "max_relative_error": 1e-9, "threshold": 1e-5},
                    {"name": "softmax", "passed": False, "max_relative_error": 2e-3, "threshold": 1e-5}]
        text = Formatters.format_gradcheck(outcomes)
        assert "1/2 通过" in text
        assert "❌ softmax" in text

    def test_help_lists_commands(self):
        text = Formatters.format_help_message()
        for command in ("/lf_synth", "/lf_flow", "/lf_train", "/lf_eval", "/lf_predict", "/lf_gradcheck"):
            assert command in text
