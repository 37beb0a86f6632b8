#!/usr/bin/env python3
"""
Command-line interface for the two-stage VLA pipeline.

Every sub-command writes under one run directory, records a run manifest,
and short-circuits when re-run with identical flags and inputs.
"""

import argparse
import logging
import os
import sys
from pathlib import Path
from typing import Any, Dict, List, Optional

from .. import __version__
from ..core import ar_model
from ..core.config_loader import ResolvedConfig, load_config
from ..core.file_writer import FileWriter
from ..core.policies import ExpertPolicy, RandomPolicy, TokenPolicy
from ..entities import (
    ArtifactNotFoundError,
    InvalidArgumentError,
    ManifestMismatchError,
    RunLockedError,
    RunManifest,
    VlaError,
)
from ..main import (
    create_ablation_service,
    create_codec_service,
    create_data_service,
    create_packing_service,
    create_report_service,
    create_rollout_service,
    create_training_service,
)
from ..services.training_service import posttrain_config
from ..utils import configure_logging, sha256_json, sha256_path

logger = logging.getLogger(__name__)

RUN_DIR_ENV = "UNIVLA_RUN_DIR"
DEFAULT_ROOT = Path("runs")
MANIFEST_FILE = "run_manifest.json"
LOCK_FILE = ".lock"


def resolve_out_dir(out: Optional[Path], command: str) -> Path:
    """Relative outputs live under the run root, which the env var moves."""
    root = Path(os.environ.get(RUN_DIR_ENV) or DEFAULT_ROOT)
    if out is None:
        return root / command
    return out if out.is_absolute() else root / out


class RunContext:
    """
    Owns one run directory for the duration of a command.

    Like a lab notebook with a lock on the door: only one experiment at a
    time, every input and result is logged with its fingerprint, and a
    repeated experiment with the same recipe just points at the old page.
    """

    def __init__(self, command: str, out_dir: Path, config: Dict[str, Any],
                 inputs: Dict[str, Path], argv: List[str],
                 force: bool = False,
                 file_writer: Optional[FileWriter] = None):
        self.command = command
        self.out_dir = out_dir
        self.config = config
        self.argv = argv
        self.force = force
        self.file_writer = file_writer or FileWriter()
        for name, path in inputs.items():
            if not path.exists():
                raise ArtifactNotFoundError(f"input '{name}' not found", path)
        self.inputs = {name: str(path) for name, path in inputs.items()}
        self.input_hashes = {name: sha256_path(path)
                             for name, path in inputs.items()}
        self.flags_hash = sha256_json({
            'command': command,
            'config': config,
            'inputs': self.input_hashes,
        })
        self._lock: Optional[Path] = None

    @property
    def manifest_path(self) -> Path:
        return self.out_dir / MANIFEST_FILE

    def __enter__(self) -> "RunContext":
        self.out_dir.mkdir(parents=True, exist_ok=True)
        lock = self.out_dir / LOCK_FILE
        try:
            handle = os.open(lock, os.O_CREAT | os.O_EXCL | os.O_WRONLY)
        except FileExistsError:
            raise RunLockedError(f"run directory is locked: {lock}")
        os.write(handle, str(os.getpid()).encode("ascii"))
        os.close(handle)
        self._lock = lock
        return self

    def __exit__(self, *exc):
        if self._lock is not None and self._lock.exists():
            self._lock.unlink()
        self._lock = None
        return False

    def up_to_date(self) -> bool:
        """
        True when this exact run already completed and its outputs verify.

        A completed run with different flags, or outputs whose hashes no
        longer match, is refused rather than silently overwritten.
        """
        if not self.manifest_path.exists():
            return False
        previous = RunManifest.from_dict(
            self.file_writer.read_json(self.manifest_path))
        if previous.flags_hash != self.flags_hash:
            if self.force:
                return False
            raise ManifestMismatchError(
                f"{self.out_dir} holds a '{previous.command}' run with "
                f"different flags or inputs; pass --force to replace it"
            )
        for name, digest in previous.outputs.items():
            path = self.out_dir / name
            if not path.exists() or sha256_path(path) != digest:
                raise ManifestMismatchError(
                    f"recorded output {path} is missing or was modified"
                )
        return True

    def finish(self, outputs: Dict[str, Path],
               checkpoints: Optional[List[Path]] = None,
               metrics: Optional[List[Path]] = None) -> RunManifest:
        def rel(path: Path) -> str:
            return path.relative_to(self.out_dir).as_posix()

        manifest = RunManifest(
            run_id=self.flags_hash[:16],
            command=self.command,
            config=self.config,
            flags_hash=self.flags_hash,
            inputs={name: f"{self.inputs[name]}@{digest}"
                    for name, digest in sorted(self.input_hashes.items())},
            outputs={rel(p): sha256_path(p)
                     for p in sorted(outputs.values())},
            checkpoints=[rel(p) for p in checkpoints or []],
            metrics=[rel(p) for p in metrics or []],
            toolkit_version=__version__,
            argv=list(self.argv),
        )
        self.file_writer.write_json(self.manifest_path, manifest.to_dict())
        return manifest


def _split(text: Optional[str], cast=str) -> Optional[tuple]:
    if text is None:
        return None
    return tuple(cast(part.strip()) for part in text.split(",") if part.strip())


def _add_common(parser: argparse.ArgumentParser):
    parser.add_argument("--config", "-c", type=Path,
                        help="YAML run configuration")
    parser.add_argument("--out", "-o", type=Path,
                        help=f"Run directory (relative paths go under "
                             f"${RUN_DIR_ENV} or ./{DEFAULT_ROOT})")
    parser.add_argument("--force", action="store_true",
                        help="Replace a different run in the same directory")
    parser.add_argument("--progress", action="store_true",
                        help="Show progress bars")
    parser.add_argument("--log-level", default="INFO",
                        choices=["DEBUG", "INFO", "WARNING", "ERROR"])


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="vla-harness",
        description="Data, codecs, two-stage training, evaluation and "
                    "ablations for a unified token VLA model",
    )
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="Generate expert demonstrations")
    _add_common(p)
    p.add_argument("--n", type=int, help="Episodes to roll out")
    p.add_argument("--task", choices=["pick_place", "long_horizon"])
    p.add_argument("--seed", type=int)

    p = sub.add_parser("fit-codecs", help="Fit vocabulary and tokenizers")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--K", type=int, dest="codebook_size",
                   help="Vision codebook size")
    p.add_argument("--gamma", type=float, help="DCT quantization scale")
    p.add_argument("--bpe-vocab", type=int, help="Action BPE vocabulary")
    p.add_argument("--chunk-size", type=int, help="Action chunk length H")

    p = sub.add_parser("posttrain", help="Stage 1 on action-free sequences")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--codecs", type=Path, required=True)
    p.add_argument("--strategy",
                   choices=["world_model", "video", "t2i", "action_pred"])
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("finetune", help="Stage 2 policy fine-tuning")
    _add_common(p)
    p.add_argument("--dataset", type=Path, required=True)
    p.add_argument("--codecs", type=Path, required=True)
    p.add_argument("--init", type=Path,
                   help="Stage-1 checkpoint (omit to start from scratch)")
    p.add_argument("--data-fraction", type=float)
    p.add_argument("--history", help="History window such as 1+1")
    p.add_argument("--w-v", type=float,
                   help="Vision loss weight for joint fine-tuning")
    p.add_argument("--steps", type=int)
    p.add_argument("--seed", type=int)

    p = sub.add_parser("eval", help="Closed-loop evaluation")
    _add_common(p)
    p.add_argument("--checkpoint", type=Path)
    p.add_argument("--codecs", type=Path)
    p.add_argument("--policy", choices=["model", "expert", "random"],
                   default="model")
    p.add_argument("--n", type=int, default=100)
    p.add_argument("--task", choices=["pick_place", "long_horizon"])
    p.add_argument("--seed", type=int, default=10_000)
    p.add_argument("--history", help="History window such as 1+1")
    p.add_argument("--workers", type=int, default=1)

    p = sub.add_parser("ablate", help="Run the full comparison suite")
    _add_common(p)
    p.add_argument("--corpus", type=Path,
                   help="Existing dataset (generated in the run if omitted)")
    p.add_argument("--codecs", type=Path,
                   help="Existing codec bundle (fitted in the run if omitted)")
    p.add_argument("--arms", help="Comma-separated post-training strategies")
    p.add_argument("--seeds", help="Comma-separated seeds")
    p.add_argument("--eval-episodes", type=int)
    p.add_argument("--workers", type=int)
    return parser


def cli_overrides(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    """Flags mapped onto config sections; unset flags stay None."""
    get = lambda name: getattr(args, name, None)  # noqa: E731
    command = args.command
    overrides: Dict[str, Dict[str, Any]] = {}
    if command == "make-data":
        overrides["data"] = {"n_episodes": get("n"), "task": get("task"),
                             "seed": get("seed")}
    elif command == "fit-codecs":
        overrides["codecs"] = {"codebook_size": get("codebook_size"),
                               "gamma": get("gamma"),
                               "bpe_vocab": get("bpe_vocab"),
                               "chunk_size": get("chunk_size")}
    elif command == "posttrain":
        overrides["pipeline"] = {"stage1_strategy": get("strategy")}
        overrides["posttrain"] = {"steps": get("steps"), "seed": get("seed")}
    elif command == "finetune":
        overrides["pipeline"] = {"data_fraction": get("data_fraction"),
                                 "history": get("history")}
        overrides["finetune"] = {"steps": get("steps"), "seed": get("seed"),
                                 "w_v": get("w_v")}
    elif command == "eval":
        overrides["rollout"] = {"history": get("history")}
        overrides["data"] = {"task": get("task")}
    elif command == "ablate":
        overrides["ablation"] = {"strategies": _split(get("arms")),
                                 "seeds": _split(get("seeds"), int),
                                 "eval_episodes": get("eval_episodes"),
                                 "workers": get("workers")}
    return overrides


def _require(path: Optional[Path], flag: str) -> Path:
    if path is None:
        raise InvalidArgumentError(f"{flag} is required here")
    return path


def cmd_make_data(args, config: ResolvedConfig, ctx: RunContext) -> int:
    episodes = create_data_service().make_data(
        config.data, ctx.out_dir / "dataset", progress=args.progress)
    ctx.finish({'dataset': ctx.out_dir / "dataset"})
    mean_length = sum(e.length for e in episodes) / len(episodes)
    print(f"✅ Generated {len(episodes)} episodes "
          f"(mean length {mean_length:.1f} frames) in {ctx.out_dir}")
    return 0


def cmd_fit_codecs(args, config: ResolvedConfig, ctx: RunContext) -> int:
    episodes = create_data_service().load(args.dataset)
    codecs = create_codec_service()
    bundle = codecs.fit(episodes, config.codecs)
    root = codecs.save(bundle, ctx.out_dir / "codecs")
    ctx.finish({'codecs': root})
    print(f"✅ Fitted codecs: vocabulary {bundle.vocab.total_size}, "
          f"codebook {bundle.codebook.K}, "
          f"{len(bundle.actions.bpe.merges)} action merges, "
          f"{bundle.actions.clamp_count} clamped coefficients")
    return 0


def _model_for(config: ResolvedConfig, bundle, init: Optional[Path],
               seed: int):
    if init is None:
        return ar_model.init_model(
            config.model_config(bundle.vocab.total_size), seed)
    model = ar_model.load_checkpoint(init)
    if model.cfg.vocab_size != bundle.vocab.total_size:
        raise InvalidArgumentError(
            f"checkpoint vocabulary {model.cfg.vocab_size} does not match "
            f"the codecs ({bundle.vocab.total_size})"
        )
    return model


def cmd_posttrain(args, config: ResolvedConfig, ctx: RunContext) -> int:
    pipeline = config.pipeline
    if pipeline.stage1_strategy == "none":
        raise InvalidArgumentError("posttrain needs a post-training strategy")
    episodes = create_data_service().load(args.dataset)
    bundle = create_codec_service().load(args.codecs)
    packer = create_packing_service(bundle, config.model["max_seq_len"])
    cfg = posttrain_config(pipeline)
    dataset = packer.posttrain_dataset(
        cfg.strategy.value, episodes, pipeline.clip_frames,
        config.data.frame_interval, pipeline.foreign_action_space)
    training = create_training_service(progress=args.progress)
    result = training.posttrain(
        config.model_config(bundle.vocab.total_size), bundle.vocab, dataset,
        cfg, ctx.out_dir)
    checkpoint = result.checkpoints["posttrain"]
    metrics = ctx.out_dir / "metrics.jsonl"
    ctx.finish({'checkpoint': checkpoint, 'metrics': metrics},
               checkpoints=[checkpoint], metrics=[metrics])
    print(f"✅ Post-trained ({cfg.strategy.value}) on {len(dataset)} "
          f"sequences; final loss {result.posttrain_records[-1]['loss']:.4f}")
    return 0


def cmd_finetune(args, config: ResolvedConfig, ctx: RunContext) -> int:
    pipeline = config.pipeline
    data = create_data_service()
    episodes = data.subset(data.load(args.dataset), pipeline.data_fraction,
                           pipeline.finetune.seed)
    bundle = create_codec_service().load(args.codecs)
    packer = create_packing_service(bundle, config.model["max_seq_len"],
                                    pipeline.mask_history_actions)
    cfg = pipeline.finetune
    dataset = packer.policy_dataset(episodes, pipeline.history,
                                    supervise_frames=cfg.joint)
    model = _model_for(config, bundle, args.init, cfg.seed)
    training = create_training_service(progress=args.progress)
    records = training.finetune(model, bundle.vocab, dataset, cfg,
                                ctx.out_dir)
    checkpoint = ctx.out_dir / "finetune.ckpt"
    metrics = ctx.out_dir / "metrics.jsonl"
    ctx.finish({'checkpoint': checkpoint, 'metrics': metrics},
               checkpoints=[checkpoint], metrics=[metrics])
    print(f"✅ Fine-tuned on {len(episodes)} episodes "
          f"({len(dataset)} sequences, history {pipeline.history.label}); "
          f"final loss {records[-1]['loss']:.4f}")
    return 0


def cmd_eval(args, config: ResolvedConfig, ctx: RunContext) -> int:
    rollout_cfg = config.rollout
    if args.policy == "model":
        bundle = create_codec_service().load(_require(args.codecs, "--codecs"))
        model = ar_model.load_checkpoint(
            _require(args.checkpoint, "--checkpoint"))
        make_policy = lambda: TokenPolicy(model, bundle, rollout_cfg)  # noqa: E731
    elif args.policy == "expert":
        make_policy = ExpertPolicy
    else:
        make_policy = lambda: RandomPolicy(rollout_cfg.seed)  # noqa: E731
    result = create_rollout_service(rollout_cfg).evaluate(
        make_policy, args.n, config.data.task, args.seed,
        workers=args.workers)
    outputs = create_report_service().write_evaluation(result, ctx.out_dir)
    ctx.finish(outputs)
    summary = result.summary()
    print("📊 Evaluation Summary")
    print("=" * 30)
    print(f"Episodes: {summary['episodes']}")
    print(f"Success rate: {summary['success_rate']:.3f}")
    print(f"Malformed generations: {summary['malformed']}")
    print(f"Mean episode length: {summary['mean_length']:.1f}")
    return 0


def cmd_ablate(args, config: ResolvedConfig, ctx: RunContext) -> int:
    data = create_data_service()
    if args.corpus is not None:
        episodes = data.load(args.corpus)
    else:
        episodes = data.make_data(config.data, ctx.out_dir / "dataset",
                                  progress=args.progress)
    codecs = create_codec_service()
    if args.codecs is not None:
        bundle = codecs.load(args.codecs)
    else:
        bundle = codecs.fit(episodes, config.codecs)
        codecs.save(bundle, ctx.out_dir / "codecs")
    ablation = create_ablation_service(progress=args.progress)
    outcome = ablation.ablation_suite(episodes, bundle, config, ctx.out_dir)
    ctx.finish(outcome.outputs)
    print("📊 Ablation Report")
    print("=" * 30)
    ranked = ablation.report_service.ranked_table(outcome.report)
    print(ranked.to_string(index=False))
    for name, verdict in sorted(outcome.verdicts.items()):
        mark = {True: "✅", False: "❌", None: "📊"}[verdict.get('passed')]
        print(f"{mark} {name}")
    print(f"Stages run: {outcome.stage_counts}")
    return 0


COMMANDS = {
    "make-data": (cmd_make_data, []),
    "fit-codecs": (cmd_fit_codecs, ["dataset"]),
    "posttrain": (cmd_posttrain, ["dataset", "codecs"]),
    "finetune": (cmd_finetune, ["dataset", "codecs", "init"]),
    "eval": (cmd_eval, ["checkpoint", "codecs"]),
    "ablate": (cmd_ablate, ["corpus", "codecs"]),
}


def main(argv: Optional[List[str]] = None) -> int:
    """Main CLI entry point; returns the process exit status."""
    argv = list(sys.argv[1:] if argv is None else argv)
    args = build_parser().parse_args(argv)
    handler, input_flags = COMMANDS[args.command]
    try:
        config = load_config(args.config, cli_overrides(args))
        out_dir = resolve_out_dir(args.out, args.command)
        configure_logging(out_dir, getattr(logging, args.log_level))
        inputs = {flag: getattr(args, flag) for flag in input_flags
                  if getattr(args, flag, None) is not None}
        if args.config is not None:
            inputs["config"] = args.config
        snapshot = config.snapshot()
        if args.command == "eval":
            snapshot["eval"] = {"policy": args.policy, "n": args.n,
                                "seed": args.seed}
        with RunContext(args.command, out_dir, snapshot, inputs, argv,
                        force=args.force) as ctx:
            if ctx.up_to_date():
                print(f"✅ {args.command}: {out_dir} is up to date")
                return 0
            return handler(args, config, ctx)
    except VlaError as e:
        logger.error("%s failed: %s", args.command, e,
                     extra={'exit_code': e.exit_code})
        print(f"❌ Error: {e}", file=sys.stderr)
        return e.exit_code
    except Exception as e:
        logger.exception("%s failed unexpectedly", args.command)
        print(f"❌ Unexpected error: {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
