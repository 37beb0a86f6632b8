import logging
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Callable, Dict, List, Optional, Sequence

from ..core import ar_model, trainer
from ..core.file_writer import FileWriter
from ..entities import (
    ArtifactNotFoundError,
    InvalidArgumentError,
    ModelConfig,
    PipelineConfig,
    Strategy,
    TokenSequence,
    TrainConfig,
    Vocabulary,
)

logger = logging.getLogger(__name__)

POSTTRAIN_CKPT = "posttrain.ckpt"
FINETUNE_CKPT = "finetune.ckpt"
METRICS_FILE = "metrics.jsonl"

DatasetFactory = Callable[[str], Sequence[TokenSequence]]


@dataclass
class TwoStageResult:
    model: ar_model.VlaTransformer
    posttrain_records: List[Dict] = field(default_factory=list)
    finetune_records: List[Dict] = field(default_factory=list)
    checkpoints: Dict[str, Path] = field(default_factory=dict)


def posttrain_config(pipeline: PipelineConfig) -> TrainConfig:
    """The stage-1 TrainConfig for the pipeline's chosen strategy."""
    if pipeline.stage1_strategy == "none":
        raise InvalidArgumentError("strategy 'none' has no post-training stage")
    return replace(pipeline.posttrain,
                   strategy=Strategy(pipeline.stage1_strategy))


class TrainingService:
    """
    Runs training stages and keeps their checkpoints and metric logs.

    This is like a coach running two training camps: general fitness first
    (watching the world), then the specific drills (acting in it), with a
    progress sheet filled in after every session.
    """

    def __init__(self, file_writer: FileWriter, progress: bool = False):
        self.file_writer = file_writer
        self.progress = progress

    def run_stage(self, model: ar_model.VlaTransformer,
                  dataset: Sequence[TokenSequence], cfg: TrainConfig,
                  vocab: Vocabulary, out_dir: Optional[Path] = None,
                  checkpoint_name: Optional[str] = None) -> List[Dict]:
        """Train in place; append metrics and save a checkpoint if asked."""
        metrics_path = out_dir / METRICS_FILE if out_dir else None
        if metrics_path is not None and metrics_path.exists():
            metrics_path.unlink()

        def record(entry: Dict):
            if metrics_path is not None:
                self.file_writer.append_jsonl(metrics_path, [entry])

        records = trainer.run_stage(model, dataset, cfg, vocab,
                                    on_record=record, progress=self.progress)
        if out_dir is not None and checkpoint_name:
            out_dir.mkdir(parents=True, exist_ok=True)
            ar_model.save_checkpoint(model, out_dir / checkpoint_name)
        return records

    def posttrain(self, model_cfg: ModelConfig, vocab: Vocabulary,
                  dataset: Sequence[TokenSequence], cfg: TrainConfig,
                  out_dir: Optional[Path] = None
                  ) -> TwoStageResult:
        model = ar_model.init_model(model_cfg, cfg.seed)
        records = self.run_stage(model, dataset, cfg, vocab, out_dir,
                                 POSTTRAIN_CKPT)
        result = TwoStageResult(model=model, posttrain_records=records)
        if out_dir is not None:
            result.checkpoints["posttrain"] = out_dir / POSTTRAIN_CKPT
        return result

    def finetune(self, model: ar_model.VlaTransformer, vocab: Vocabulary,
                 dataset: Sequence[TokenSequence], cfg: TrainConfig,
                 out_dir: Optional[Path] = None) -> List[Dict]:
        if cfg.stage != "finetune":
            raise InvalidArgumentError("fine-tuning needs a finetune config")
        return self.run_stage(model, dataset, cfg, vocab, out_dir,
                              FINETUNE_CKPT)

    def two_stage(self, model_cfg: ModelConfig, vocab: Vocabulary,
                  pipeline: PipelineConfig, posttrain_data: DatasetFactory,
                  finetune_data: Sequence[TokenSequence],
                  out_dir: Optional[Path] = None) -> TwoStageResult:
        """
        Optional post-training, then fine-tuning from its weights.

        `posttrain_data` builds the stage-1 dataset for a strategy tag and
        is only called when stage 1 actually runs. With ``resume`` set the
        stage-1 checkpoint in `out_dir` is loaded instead.
        """
        result = TwoStageResult(model=None)
        if pipeline.stage1_strategy == "none":
            model = ar_model.init_model(model_cfg, pipeline.finetune.seed)
        elif pipeline.resume:
            path = out_dir / "posttrain" / POSTTRAIN_CKPT if out_dir else None
            if path is None or not path.exists():
                raise ArtifactNotFoundError(
                    "stage-1 checkpoint required for resume", path
                )
            model = ar_model.load_checkpoint(path)
            result.checkpoints["posttrain"] = path
            logger.info("Resumed from stage-1 checkpoint %s", path)
        else:
            cfg = posttrain_config(pipeline)
            stage_dir = out_dir / "posttrain" if out_dir else None
            stage1 = self.posttrain(model_cfg, vocab,
                                    posttrain_data(cfg.strategy.value), cfg,
                                    stage_dir)
            model = stage1.model
            result.posttrain_records = stage1.posttrain_records
            result.checkpoints.update(stage1.checkpoints)

        stage_dir = out_dir / "finetune" if out_dir else None
        result.finetune_records = self.finetune(
            model, vocab, finetune_data, pipeline.finetune, stage_dir
        )
        result.model = model
        if stage_dir is not None:
            result.checkpoints["finetune"] = stage_dir / FINETUNE_CKPT
        return result
