import logging
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence

import numpy as np
import pandas as pd

from ..core import ar_model, trainer
from ..core.codec_bundle import CodecBundle
from ..core.config_loader import ResolvedConfig
from ..core.file_writer import FileWriter
from ..core.policies import TokenPolicy
from ..core.stage_graph import Stage, StageGraph
from ..entities import (
    Episode,
    HistoryConfig,
    InvalidArgumentError,
    POSTTRAIN_STRATEGIES,
    Strategy,
    TrainConfig,
)
from .data_service import DataService
from .packing_service import PackingService
from .report_service import ReportService
from .rollout_service import RolloutService
from .training_service import METRICS_FILE, TrainingService

logger = logging.getLogger(__name__)

STAGES_DIR = "stages"
DONE_MARKER = "done.json"
CHECKPOINT = "model.ckpt"


@dataclass(frozen=True)
class ArmSpec:
    arm: str
    strategy: str
    seed: int
    data_fraction: float = 1.0
    history: str = "1+1"
    joint: bool = False


@dataclass
class AblationOutcome:
    report: pd.DataFrame
    verdicts: Dict[str, Any]
    outputs: Dict[str, Path] = field(default_factory=dict)
    stage_counts: Dict[str, int] = field(default_factory=dict)


class AblationService:
    """
    Runs every comparison arm over one shared corpus and codec bundle.

    This is like a bake-off where every contestant gets the same pantry:
    the arms differ only in how the ingredients are prepared, and any
    preparation two contestants share (a post-trained stage-1 model, a
    packed dataset) is made once and handed to both.
    """

    def __init__(self, data_service: DataService,
                 training_service: TrainingService,
                 report_service: ReportService, file_writer: FileWriter):
        self.data_service = data_service
        self.training_service = training_service
        self.report_service = report_service
        self.file_writer = file_writer

    @staticmethod
    def arms(config: ResolvedConfig) -> List[ArmSpec]:
        ablation = config.ablation
        unknown = [s for s in ablation.strategies
                   if s not in POSTTRAIN_STRATEGIES]
        if unknown:
            raise InvalidArgumentError(f"unknown strategy tags: {unknown}")
        label = config.pipeline.history.label
        specs = []
        for seed in ablation.seeds:
            for strategy in ablation.strategies:
                specs.append(ArmSpec("strategy", strategy, seed,
                                     history=label))
            if ablation.run_data_fraction:
                for strategy in ("none", "world_model"):
                    specs.append(ArmSpec("data_fraction", strategy, seed,
                                         ablation.data_fraction_arm, label))
            if ablation.run_joint:
                specs.append(ArmSpec("joint", "world_model", seed,
                                     history=label, joint=True))
            if ablation.run_history:
                for history in ablation.history_sweep:
                    specs.append(ArmSpec("history", "world_model", seed,
                                         history=history))
        return specs

    def _history(self, config: ResolvedConfig, label: str) -> HistoryConfig:
        return HistoryConfig.parse(label, config.pipeline.history.stride)

    def build_graph(self, specs: Sequence[ArmSpec], config: ResolvedConfig,
                    dataset_hash: str) -> tuple:
        """Stage DAG plus, per arm, the keys of its finetune and eval stages."""
        graph = StageGraph()
        pipeline = config.pipeline
        dataset_key = graph.add("dataset", {"hash": dataset_hash})
        codecs_key = graph.add("codecs", asdict(config.codecs), [dataset_key])
        model = dict(config.model)
        arm_keys = []
        for spec in specs:
            inputs = []
            if spec.strategy != "none":
                train = replace(pipeline.posttrain,
                                strategy=Strategy(spec.strategy),
                                seed=spec.seed)
                pack = graph.add("pack", {
                    "purpose": "posttrain",
                    "strategy": spec.strategy,
                    "clip_frames": pipeline.clip_frames,
                    "frame_interval": config.data.frame_interval,
                    "foreign_action_space": pipeline.foreign_action_space,
                }, [codecs_key])
                inputs.append(graph.add("posttrain", {
                    "train": asdict(train), "model": model,
                }, [pack]))
            finetune = replace(pipeline.finetune, seed=spec.seed)
            if spec.joint:
                w_v, w_a = config.ablation.joint_weights
                finetune = replace(finetune, w_v=w_v, w_a=w_a)
            history = self._history(config, spec.history)
            pack = graph.add("pack", {
                "purpose": "finetune",
                "history": asdict(history),
                "data_fraction": spec.data_fraction,
                "subset_seed": spec.seed if spec.data_fraction < 1.0 else 0,
                "supervise_frames": spec.joint,
                "mask_history_actions": pipeline.mask_history_actions,
            }, [codecs_key])
            tune_key = graph.add("finetune", {
                "train": asdict(finetune), "model": model,
            }, [pack] + inputs)
            rollout = replace(config.rollout, history=history)
            eval_key = graph.add("eval", {
                "rollout": asdict(rollout),
                "n": config.ablation.eval_episodes,
                "seed": config.ablation.eval_seed,
                "task": config.data.task,
            }, [tune_key])
            arm_keys.append((spec, tune_key, eval_key))
        return graph, dataset_key, codecs_key, arm_keys

    def _stage_dir(self, out_dir: Path, stage: Stage) -> Path:
        return out_dir / STAGES_DIR / f"{stage.kind}-{stage.short_key}"

    def _train(self, stage: Stage, results: Dict[str, Any],
               bundle: CodecBundle, config: ResolvedConfig,
               out_dir: Path) -> Dict[str, Any]:
        stage_dir = self._stage_dir(out_dir, stage)
        marker = stage_dir / DONE_MARKER
        checkpoint = stage_dir / CHECKPOINT
        if marker.exists() and checkpoint.exists():
            logger.info("Reusing %s stage %s", stage.kind, stage.short_key)
            return {"checkpoint": checkpoint,
                    "records": self.file_writer.read_jsonl(
                        stage_dir / METRICS_FILE)}
        cfg = TrainConfig(**stage.params["train"])
        vocab = bundle.vocab
        upstream = [results[k] for k in stage.inputs]
        dataset = next(r for r in upstream if isinstance(r, list))
        parents = [r for r in upstream if isinstance(r, dict)]
        if parents:
            model = ar_model.load_checkpoint(parents[0]["checkpoint"])
        else:
            model = ar_model.init_model(
                config.model_config(vocab.total_size), cfg.seed)
        records = self.training_service.run_stage(
            model, dataset, cfg, vocab, stage_dir, CHECKPOINT)
        self.file_writer.write_json(marker, {"key": stage.key,
                                             "steps": len(records)})
        return {"checkpoint": checkpoint, "records": records}

    def _pack(self, stage: Stage, bundle: CodecBundle,
              episodes: Sequence[Episode], config: ResolvedConfig) -> list:
        params = stage.params
        packer = PackingService(
            bundle, config.model["max_seq_len"],
            params.get("mask_history_actions", False),
        )
        if params["purpose"] == "posttrain":
            return packer.posttrain_dataset(
                params["strategy"], episodes, params["clip_frames"],
                params["frame_interval"], params["foreign_action_space"],
            )
        subset = self.data_service.subset(episodes, params["data_fraction"],
                                          params["subset_seed"])
        return packer.policy_dataset(subset, HistoryConfig(**params["history"]),
                                     params["supervise_frames"])

    def _evaluate(self, stage: Stage, results: Dict[str, Any],
                  bundle: CodecBundle, config: ResolvedConfig,
                  out_dir: Path) -> Dict[str, Any]:
        stage_dir = self._stage_dir(out_dir, stage)
        marker = stage_dir / DONE_MARKER
        if marker.exists():
            return self.file_writer.read_json(marker)
        params = stage.params
        rollout = replace(config.rollout, history=HistoryConfig(
            **params["rollout"]["history"]))
        model = ar_model.load_checkpoint(results[stage.inputs[0]]["checkpoint"])
        evaluation = RolloutService(rollout).evaluate(
            lambda: TokenPolicy(model, bundle, rollout), params["n"],
            params["task"], params["seed"], workers=config.ablation.workers,
        )
        self.report_service.write_evaluation(evaluation, stage_dir)
        summary = evaluation.summary()
        self.file_writer.write_json(marker, summary)
        return summary

    def ablation_suite(self, episodes: Sequence[Episode], bundle: CodecBundle,
                       config: ResolvedConfig, out_dir: Path
                       ) -> AblationOutcome:
        """
        Train and evaluate every arm, then write the ranked report.

        Arms sharing a stage (same parameters and inputs) share its output,
        so the 1+1 history arm reuses the main world-model arm outright.
        """
        if not episodes:
            raise InvalidArgumentError("ablation needs a non-empty corpus")
        specs = self.arms(config)
        graph, dataset_key, codecs_key, arm_keys = self.build_graph(
            specs, config, self.data_service.content_hash(episodes))
        logger.info("Ablation DAG: %s", graph.counts())

        def run(stage: Stage, results: Dict[str, Any]):
            if stage.kind == "pack":
                return self._pack(stage, bundle, episodes, config)
            if stage.kind in ("posttrain", "finetune"):
                return self._train(stage, results, bundle, config, out_dir)
            if stage.kind == "eval":
                return self._evaluate(stage, results, bundle, config, out_dir)
            raise InvalidArgumentError(f"no runner for stage {stage.kind}")

        results = graph.execute(run, done={dataset_key: list(episodes),
                                           codecs_key: bundle})
        rows = self._rows(arm_keys, results)
        df = self.report_service.build_report(rows)
        verdicts = self.report_service.gates(df, config.pipeline.finetune.steps)
        curves = {
            f"{spec.strategy}/seed{spec.seed}": results[tune_key]["records"]
            for spec, tune_key, _ in arm_keys if spec.arm == "strategy"
        }
        outputs = self.report_service.write_report(df, verdicts, out_dir,
                                                   curves)
        return AblationOutcome(report=df, verdicts=verdicts, outputs=outputs,
                               stage_counts=graph.counts())

    @staticmethod
    def _threshold(arm_keys, results) -> Optional[float]:
        """Median final fine-tuning loss of the no-post-training arm."""
        finals = [trainer.final_loss(results[tune_key]["records"])
                  for spec, tune_key, _ in arm_keys
                  if spec.arm == "strategy" and spec.strategy == "none"]
        return float(np.median(finals)) if finals else None

    def _rows(self, arm_keys, results) -> List[Dict[str, Any]]:
        threshold = self._threshold(arm_keys, results)
        rows = []
        for spec, tune_key, eval_key in arm_keys:
            records = results[tune_key]["records"]
            summary = results[eval_key]
            convergence = (trainer.steps_to_threshold(records, threshold)
                           if threshold is not None else None)
            rows.append({
                'arm': spec.arm,
                'strategy': spec.strategy,
                'seed': spec.seed,
                'data_fraction': spec.data_fraction,
                'history': spec.history,
                'joint': spec.joint,
                'success_rate': summary['success_rate'],
                'convergence_step': convergence,
                'final_loss': trainer.final_loss(records),
                'malformed': summary['malformed'],
                'mean_length': summary['mean_length'],
                'mean_action_tokens': summary['mean_action_tokens'],
            })
        return rows
