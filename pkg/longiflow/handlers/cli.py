"""命令行入口：python -m longiflow <子命令>

退出码：0 成功，1 用法错误，2 数据错误，3 数值失败。失败时标准错误输出一行可机读的错误描述。
"""
import argparse
import json
import sys
from typing import Any, Dict, List, Optional, Sequence, Tuple

from ..models.report import CommandResult
from ..utils.config_store import ConfigStore
from ..utils.errors import LongiFlowError, UsageError
from .base_command_handler import error_result
from .command_handlers import HANDLERS, SUBSETS


class _ArgumentParser(argparse.ArgumentParser):
    """参数错误抛 UsageError，而不是直接退出"""

    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


# 命令行参数 -> 配置键
FLAG_TO_CONFIG = {
    "subjects": "phantom_subjects",
    "size": "phantom_size",
    "timepoints": "phantom_timepoints",
    "atrophy_rate": "phantom_atrophy_rate",
    "noise_std": "phantom_noise_std",
    "seed": "seed",
    "method": "flow_method",
    "target_gap": "target_gap",
    "threads": "threads",
    "hs_alpha": "hs_alpha",
    "hs_iters": "hs_iters",
    "demons_iters": "demons_iters",
    "epochs": "epochs",
    "lr": "lr",
    "batch_size": "batch_size",
    "mode": "embedding_mode",
    "backbone": "backbone_kind",
    "query_grid": "query_grid",
    "blocks": "num_blocks",
    "save_interval": "save_interval",
    "dtype": "dtype",
    "train_fraction": "train_fraction",
    "eps": "gradcheck_eps",
    "max_elements": "gradcheck_max_elements",
}


def build_parser() -> argparse.ArgumentParser:
    parser = _ArgumentParser(prog="longiflow", description="纵向流场 + 可变形查询分类器")
    parser.add_argument("--config", help="JSON 配置文件，命令行参数优先")
    sub = parser.add_subparsers(dest="command", required=True)

    synth = sub.add_parser("synth", help="生成两类合成体数据与清单")
    synth.add_argument("--out", required=True)
    synth.add_argument("--subjects", type=int)
    synth.add_argument("--size", type=int)
    synth.add_argument("--timepoints", help="逗号分隔的年份，如 0,1")
    synth.add_argument("--seed", type=int)
    synth.add_argument("--atrophy-rate", type=float)
    synth.add_argument("--noise-std", type=float)

    flow = sub.add_parser("flow", help="配对并预计算流场")
    flow.add_argument("--manifest", required=True)
    flow.add_argument("--out", required=True)
    flow.add_argument("--method", choices=["optical_flow", "registration"])
    flow.add_argument("--target-gap", type=float)
    flow.add_argument("--threads", type=int)
    flow.add_argument("--hs-alpha", type=float)
    flow.add_argument("--hs-iters", type=int)
    flow.add_argument("--demons-iters", type=int)

    train = sub.add_parser("train", help="训练并写出检查点与损失曲线")
    train.add_argument("--pairs", required=True, help="flow 命令的输出目录")
    train.add_argument("--out", required=True)
    train.add_argument("--subset", choices=SUBSETS, default="train")
    train.add_argument("--epochs", type=int)
    train.add_argument("--lr", type=float)
    train.add_argument("--batch-size", type=int)
    train.add_argument("--seed", type=int)
    train.add_argument("--mode", choices=["flow", "prior_image", "single_image"])
    train.add_argument("--backbone", choices=["dense", "residual"])
    train.add_argument("--query-grid", help="如 3,3,3")
    train.add_argument("--blocks", type=int)
    train.add_argument("--no-querying", action="store_true", help="全局池化基线")
    train.add_argument("--save-interval", type=int)
    train.add_argument("--dtype", choices=["float32", "float64"])
    train.add_argument("--train-fraction", type=float)

    evaluate = sub.add_parser("eval", help="评估准确率与 AUC")
    evaluate.add_argument("--pairs", required=True)
    evaluate.add_argument("--checkpoint", required=True, help="train 命令的输出目录")
    evaluate.add_argument("--out", required=True)
    evaluate.add_argument("--subset", choices=SUBSETS, default="test")
    evaluate.add_argument("--per-subject", action="store_true")
    evaluate.add_argument("--follow-up-only", action="store_true", help="只评估有先前扫描的配对")

    predict = sub.add_parser("predict", help="逐样本得分与注意力采样点")
    predict.add_argument("--pairs", required=True)
    predict.add_argument("--checkpoint", required=True)
    predict.add_argument("--out", required=True)
    predict.add_argument("--sample", action="append", dest="samples", help="扫描ID，如 sub-003@1，可重复")
    predict.add_argument("--attention", action="store_true", help="导出注意力采样点")

    gradcheck = sub.add_parser("gradcheck", help="有限差分梯度自检")
    gradcheck.add_argument("--out")
    gradcheck.add_argument("--check", action="append", dest="checks")
    gradcheck.add_argument("--eps", type=float)
    gradcheck.add_argument("--max-elements", type=int)
    gradcheck.add_argument("--seed", type=int)
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Any]:
    overrides = {key: getattr(args, flag) for flag, key in FLAG_TO_CONFIG.items()
                 if getattr(args, flag, None) is not None}
    if getattr(args, "no_querying", False):
        overrides["use_querying"] = False
    if getattr(args, "per_subject", False):
        overrides["per_subject"] = True
    if getattr(args, "follow_up_only", False):
        overrides["follow_up_only"] = True
    return overrides


def handler_params(args: argparse.Namespace) -> Dict[str, Any]:
    if args.command == "synth":
        return {"out": args.out}
    if args.command == "flow":
        return {"manifest": args.manifest, "out": args.out}
    if args.command == "train":
        return {"pairs_dir": args.pairs, "out": args.out, "subset": args.subset}
    if args.command == "eval":
        return {"pairs_dir": args.pairs, "checkpoint_dir": args.checkpoint, "out": args.out, "subset": args.subset}
    if args.command == "predict":
        return {"pairs_dir": args.pairs, "checkpoint_dir": args.checkpoint, "out": args.out,
                "sample_ids": args.samples, "attention": args.attention}
    return {"out": args.out, "checks": args.checks}


def run_cli(argv: Optional[Sequence[str]] = None) -> Tuple[CommandResult, Optional[str]]:
    """解析参数并执行，返回 (结果, 子命令名)"""
    try:
        args = build_parser().parse_args(argv)
        config = ConfigStore.from_file(args.config, overrides_from_args(args))
    except LongiFlowError as e:
        return error_result(e), None
    handler = HANDLERS[args.command](config)
    return handler.run(**handler_params(args)), args.command


def main(argv: Optional[List[str]] = None) -> int:
    result, _ = run_cli(argv)
    if result.is_success():
        print(json.dumps(result.to_dict(), ensure_ascii=False))
    else:
        print(result.error_line(), file=sys.stderr)
    return result.exit_code
