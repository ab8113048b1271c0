"""批处理命令处理器 - 合成数据、流场、训练、评估、预测与梯度自检"""
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from ..models.flow import FlowField
from ..models.scan import PairRecord
from ..services.attention_export import attention_dump, write_attention
from ..services.dataset_service import (
    DatasetService, build_pairs, filter_pairs, load_manifest, save_manifest, subject_split,
)
from ..services.flow_estimation import FlowEstimator
from ..services.gradcheck_suite import raise_on_failure, run_gradcheck_suite
from ..services.longitudinal_model import LongitudinalClassifier
from ..services.phantom_generator import PhantomGenerator
from ..services.sample_loader import SampleLoader
from ..services.trainer import Trainer, evaluate, load_model, score
from ..utils.data_storage import DataStorage
from ..utils.errors import DataError, UsageError
from ..utils.logger import logger
from ..utils.volume_io import read_volume, write_flow, write_volume
from .base_command_handler import BaseCommandHandler

PathLike = Union[str, Path]
MANIFEST_NAME = "manifest.csv"
SPLIT_NAME = "split.json"
LOSS_HISTORY_NAME = "loss_history.csv"
EVAL_REPORT_NAME = "eval_report.json"
PREDICTIONS_NAME = "predictions.json"
GRADCHECK_REPORT_NAME = "gradcheck.json"
SUBSETS = ("train", "test", "all")


def flow_relpath(pair: PairRecord) -> str:
    return f"flows/{pair.current.subject_id}_t{pair.current.t:g}.flow"


def attention_filename(sample_id: str) -> str:
    return "attention/" + sample_id.replace("@", "_t") + ".json"


def _storage_for_pairs(pairs_dir: PathLike) -> Tuple[List[PairRecord], Path]:
    return DatasetService(DataStorage(pairs_dir)).load_pair_index()


class SynthCommandHandler(BaseCommandHandler):
    """cmd_synth：两类均衡的合成数据集 + 清单"""

    command_name = "synth"

    def __init__(self, config):
        super().__init__(config)
        self.set_action_description("生成合成数据")

    def execute(self, out: PathLike) -> List[Path]:
        settings = self.config.phantom_settings()
        storage = self.prepare_output(out, {"out": out})
        generator = PhantomGenerator.from_settings(settings)
        scans = generator.dataset(settings.subjects, settings.timepoints, settings.seed)
        artifacts = [self.effective_config_path]
        for record, volume in scans:
            artifacts.append(write_volume(storage.path(record.volume_path), volume,
                                          subject_id=record.subject_id, t_years=record.t))
        artifacts.append(save_manifest(storage.path(MANIFEST_NAME), [record for record, _ in scans]))
        self.details = {"subjects": settings.subjects, "scans": len(scans)}
        logger.info(f"合成数据: {settings.subjects} 个受试者, {len(scans)} 个体数据 -> {storage.data_dir}")
        return artifacts


class FlowCommandHandler(BaseCommandHandler):
    """cmd_flow：配对 + 每个有先前扫描的配对一个流场文件 + 配对索引"""

    command_name = "flow"

    def __init__(self, config):
        super().__init__(config)
        self.set_action_description("预计算流场")

    def _compute(self, estimator: FlowEstimator, manifest_dir: Path, pair: PairRecord) -> FlowField:
        prior = read_volume(manifest_dir / pair.prior.volume_path)
        current = read_volume(manifest_dir / pair.current.volume_path)
        return estimator.estimate(prior, current, pair.prior.t, pair.current.t, pair.current.subject_id)

    def execute(self, manifest: PathLike, out: PathLike) -> List[Path]:
        flow_settings = self.config.flow_settings()
        pairing = self.config.pairing_settings()
        threads = self.config.get("threads", 1)
        if threads < 1:
            raise UsageError(f"threads must be >= 1, got {threads}")
        manifest = Path(manifest)
        records = load_manifest(manifest)
        storage = self.prepare_output(out, {"manifest": manifest, "out": out})

        pairs = build_pairs(records, pairing.target_gap, pairing.dm_tolerance, pairing.ds_window)
        todo = [p for p in pairs if p.needs_flow()]
        estimator = FlowEstimator(flow_settings)
        # 每个配对独立计算，map 保持输入顺序
        with ThreadPoolExecutor(max_workers=threads) as pool:
            flows = list(pool.map(lambda p: self._compute(estimator, manifest.parent, p), todo))

        artifacts = [self.effective_config_path]
        for pair, flow in zip(todo, flows):
            pair.flow_path = flow_relpath(pair)
            artifacts.append(write_flow(storage.path(pair.flow_path), flow))
        artifacts.append(DatasetService(storage).save_pair_index(
            pairs, manifest, {"flow_method": flow_settings.method.value, "pairing": pairing.to_dict()}))
        self.details = {"pairs": len(pairs), "flows": len(todo)}
        logger.info(f"流场预计算完成: {len(todo)} 个流场（{flow_settings.method.value}），{len(pairs)} 条配对")
        return artifacts


class TrainCommandHandler(BaseCommandHandler):
    """cmd_train：按受试者划分后训练，写出检查点、损失曲线与划分"""

    command_name = "train"

    def __init__(self, config):
        super().__init__(config)
        self.set_action_description("训练")

    def execute(self, pairs_dir: PathLike, out: PathLike, subset: str = "train") -> List[Path]:
        if subset not in SUBSETS:
            raise UsageError(f"subset must be one of {SUBSETS}, got {subset!r}")
        train_config = self.config.train_config()
        embedding_config = self.config.embedding_config()
        querying_config = self.config.querying_config()
        pairs, manifest = _storage_for_pairs(pairs_dir)
        if not pairs:
            raise DataError(f"pair index in {pairs_dir} is empty")
        storage = self.prepare_output(out, {"pairs_dir": pairs_dir, "out": out, "subset": subset})

        train_subjects, test_subjects = subject_split([p.current for p in pairs], train_config.train_fraction,
                                                      train_config.seed)
        split_path = storage.save_json(SPLIT_NAME, {"train": train_subjects, "test": test_subjects,
                                                    "seed": train_config.seed})
        chosen = {"train": train_subjects, "test": test_subjects,
                  "all": train_subjects + test_subjects}[subset]
        loader = SampleLoader(manifest.parent, pairs_dir, train_config.mode, train_config.zscore_inputs,
                              train_config.dtype)
        samples = loader.load_all(filter_pairs(pairs, chosen))

        model = LongitudinalClassifier(embedding_config, querying_config, seed=train_config.seed,
                                       dtype=np.dtype(train_config.dtype))
        result = Trainer(model, train_config, storage).train(samples)
        loss_path = storage.save_loss_history(LOSS_HISTORY_NAME, result.loss_history)
        self.details = {"loss_history": result.loss_history, "samples": len(samples)}
        return [self.effective_config_path, split_path, loss_path] + [Path(p) for p in result.checkpoints]


class _CheckpointCommandHandler(BaseCommandHandler):
    """评估/预测共用：载入检查点与对应的配对样本"""

    def _load(self, pairs_dir: PathLike, checkpoint_dir: PathLike, subset: Optional[str]):
        if subset is not None and subset not in SUBSETS:
            raise UsageError(f"subset must be one of {SUBSETS}, got {subset!r}")
        checkpoint_storage = DataStorage(checkpoint_dir)
        model, meta = load_model(checkpoint_storage)
        pairs, manifest = _storage_for_pairs(pairs_dir)
        if subset is not None and subset != "all":
            split = checkpoint_storage.load_json(SPLIT_NAME)
            if subset not in split:
                raise DataError(f"{checkpoint_storage.path(SPLIT_NAME)} has no '{subset}' subjects")
            pairs = filter_pairs(pairs, split[subset])
        zscore_inputs = meta.get("train", {}).get("zscore_inputs", True)
        loader = SampleLoader(manifest.parent, pairs_dir, model.embedding_config.mode, zscore_inputs, model.dtype)
        return model, pairs, loader


class EvalCommandHandler(_CheckpointCommandHandler):
    """cmd_eval：准确率、AUC 与逐样本得分"""

    command_name = "eval"

    def __init__(self, config):
        super().__init__(config)
        self.set_action_description("评估")

    def execute(self, pairs_dir: PathLike, checkpoint_dir: PathLike, out: PathLike,
                subset: str = "test") -> List[Path]:
        per_subject = self.config.get("per_subject", False)
        model, pairs, loader = self._load(pairs_dir, checkpoint_dir, subset)
        if self.config.get("follow_up_only", False):
            pairs = [p for p in pairs if p.has_prior()]
            if not pairs:
                raise DataError(f"no follow-up pairs (with a prior scan) in {pairs_dir} for subset {subset!r}")
        storage = self.prepare_output(out, {"pairs_dir": pairs_dir, "checkpoint_dir": checkpoint_dir,
                                            "out": out, "subset": subset})
        report = evaluate(model, loader.load_all(pairs), per_subject=per_subject)
        self.details = report.to_dict()
        return [self.effective_config_path, storage.save_json(EVAL_REPORT_NAME, report.to_dict())]


class PredictCommandHandler(_CheckpointCommandHandler):
    """cmd_predict：逐样本得分，可选导出注意力采样点"""

    command_name = "predict"

    def __init__(self, config):
        super().__init__(config)
        self.set_action_description("预测")

    def execute(self, pairs_dir: PathLike, checkpoint_dir: PathLike, out: PathLike,
                sample_ids: Optional[Sequence[str]] = None, attention: bool = False) -> List[Path]:
        model, pairs, loader = self._load(pairs_dir, checkpoint_dir, None)
        if sample_ids:
            by_id: Dict[str, PairRecord] = {p.sample_id: p for p in pairs}
            unknown = [s for s in sample_ids if s not in by_id]
            if unknown:
                raise UsageError(f"unknown sample ids: {', '.join(unknown)}")
            pairs = [by_id[s] for s in sample_ids]
        if attention and not model.uses_querying:
            raise UsageError("attention export needs a model trained with use_querying=true")
        storage = self.prepare_output(out, {"pairs_dir": pairs_dir, "checkpoint_dir": checkpoint_dir,
                                            "out": out, "samples": list(sample_ids or []),
                                            "attention": attention})
        artifacts = [self.effective_config_path]
        predictions = []
        for pair in pairs:
            sample = loader.load(pair)
            if attention:
                value, payload = attention_dump(model, sample)
                artifacts.append(write_attention(payload, storage.path(attention_filename(sample.sample_id))))
            else:
                value = score(model, sample)
            predictions.append({"sample_id": sample.sample_id, "subject_id": sample.subject_id,
                                "label": sample.label, "pair_kind": pair.pair_kind.value, "score": value})
        artifacts.insert(1, storage.save_json(PREDICTIONS_NAME, {"predictions": predictions}))
        self.details = {"predictions": predictions}
        return artifacts


class GradCheckCommandHandler(BaseCommandHandler):
    """cmd_gradcheck：任一项失败即数值错误（退出码 3）"""

    command_name = "gradcheck"

    def __init__(self, config):
        super().__init__(config)
        self.set_action_description("梯度自检")

    def execute(self, out: Optional[PathLike] = None, checks: Optional[Sequence[str]] = None) -> List[Path]:
        outcomes = run_gradcheck_suite(eps=self.config.get("gradcheck_eps", 1e-6),
                                       max_elements=self.config.get("gradcheck_max_elements", 12),
                                       seed=self.config.get("seed", 0), names=checks)
        self.details = {"outcomes": [o.to_dict() for o in outcomes]}
        artifacts: List[Path] = []
        if out is not None:
            storage = self.prepare_output(out, {"out": out, "checks": list(checks or [])})
            artifacts = [self.effective_config_path, storage.save_json(GRADCHECK_REPORT_NAME, self.details)]
        raise_on_failure(outcomes)
        return artifacts


HANDLERS = {
    handler.command_name: handler
    for handler in (SynthCommandHandler, FlowCommandHandler, TrainCommandHandler, EvalCommandHandler,
                    PredictCommandHandler, GradCheckCommandHandler)
}
