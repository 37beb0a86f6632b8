"""
Configuration dataclasses, one per section of the run YAML file.

Each dataclass validates itself in ``__post_init__`` so that a bad value is
reported before any work starts.
"""
from dataclasses import asdict, dataclass, field
from typing import Any, Dict, List, Optional, Tuple

from .entities import HistoryConfig, Strategy, TaskKind
from .errors import InvalidArgumentError


POSTTRAIN_STRATEGIES = ("none", "action_pred", "t2i", "video", "world_model")


@dataclass(frozen=True)
class ModelConfig:
    vocab_size: int
    d_model: int = 128
    n_layers: int = 4
    n_heads: int = 4
    d_ff: int = 512
    max_seq_len: int = 1024
    dropout: float = 0.0

    def __post_init__(self):
        for name in ("vocab_size", "d_model", "n_layers", "n_heads", "d_ff",
                     "max_seq_len"):
            if getattr(self, name) < 1:
                raise InvalidArgumentError(f"model.{name} must be >= 1")
        if self.d_model % self.n_heads:
            raise InvalidArgumentError(
                f"d_model ({self.d_model}) must be divisible by "
                f"n_heads ({self.n_heads})"
            )
        if not 0.0 <= self.dropout < 1.0:
            raise InvalidArgumentError("dropout must lie in [0, 1)")

    @property
    def head_dim(self) -> int:
        return self.d_model // self.n_heads


@dataclass(frozen=True)
class TrainConfig:
    stage: str = "finetune"
    strategy: Strategy = Strategy.POLICY
    steps: int = 1000
    batch_size: int = 32
    lr0: float = 1e-3
    schedule: str = "cosine"
    seed: int = 0
    w_v: float = 0.0
    w_a: float = 1.0
    weight_decay: float = 0.01
    betas: Tuple[float, float] = (0.9, 0.95)
    grad_clip: float = 1.0
    log_every: int = 50

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        object.__setattr__(self, "betas", tuple(self.betas))
        if self.stage not in ("posttrain", "finetune"):
            raise InvalidArgumentError(f"unknown stage {self.stage!r}")
        if self.steps < 1 or self.batch_size < 1:
            raise InvalidArgumentError("steps and batch_size must be >= 1")
        if self.lr0 <= 0:
            raise InvalidArgumentError("lr0 must be > 0")
        if self.schedule not in ("cosine", "constant"):
            raise InvalidArgumentError(f"unknown schedule {self.schedule!r}")
        if self.w_v < 0 or self.w_a < 0 or self.w_v + self.w_a == 0:
            raise InvalidArgumentError("loss weights must be >= 0, not both 0")
        finetune = self.strategy == Strategy.POLICY
        if finetune != (self.stage == "finetune"):
            raise InvalidArgumentError(
                f"strategy {self.strategy.value!r} does not belong to "
                f"stage {self.stage!r}"
            )

    @property
    def joint(self) -> bool:
        """True when future frames are supervised next to actions."""
        return self.strategy == Strategy.POLICY and self.w_v > 0


@dataclass(frozen=True)
class DataConfig:
    n_episodes: int = 500
    task: str = "pick_place"
    task_mix: Optional[Dict[str, float]] = None
    seed: int = 0
    keyframe_threshold: float = 0.01
    min_frames: int = 6
    trim_static: bool = True
    frame_interval: int = 1
    max_episodes_per_task: Optional[int] = None

    def __post_init__(self):
        if self.n_episodes < 1:
            raise InvalidArgumentError("n_episodes must be >= 1")
        if self.frame_interval < 1 or self.min_frames < 2:
            raise InvalidArgumentError("frame_interval/min_frames too small")
        for name in self.mix:
            TaskKind(name)

    @property
    def mix(self) -> Dict[str, float]:
        return dict(self.task_mix) if self.task_mix else {self.task: 1.0}


@dataclass(frozen=True)
class CodecConfig:
    codebook_size: int = 256
    kmeans_iters: int = 25
    gamma: float = 128.0
    clamp_low: int = -512
    clamp_high: int = 511
    bpe_vocab: int = 1536
    text_size: int = 100
    action_size: int = 1536
    chunk_size: int = 10
    relative_mode: str = "consecutive"
    seed: int = 0

    def __post_init__(self):
        if self.gamma <= 0:
            raise InvalidArgumentError("gamma must be > 0")
        if self.clamp_low >= self.clamp_high:
            raise InvalidArgumentError("clamp range is empty")
        if self.bpe_vocab > self.action_size:
            raise InvalidArgumentError(
                "bpe_vocab cannot exceed the action range size"
            )
        if self.bpe_vocab < self.clamp_high - self.clamp_low + 1:
            raise InvalidArgumentError(
                "bpe_vocab must cover every clamped coefficient symbol"
            )
        if self.relative_mode not in ("consecutive", "first_frame"):
            raise InvalidArgumentError(
                f"unknown relative mode {self.relative_mode!r}"
            )
        if self.chunk_size < 1:
            raise InvalidArgumentError("chunk_size must be >= 1")


@dataclass(frozen=True)
class RolloutConfig:
    chunk_size: int = 10
    history: HistoryConfig = field(
        default_factory=lambda: HistoryConfig(history=1, stride=10)
    )
    max_env_steps: int = 100
    decoding: str = "greedy"
    top_k: int = 5
    seed: int = 0
    token_budget: int = 64
    execute_steps: Optional[int] = None
    grip_deadband: float = 0.5
    workers: int = 1

    def __post_init__(self):
        if isinstance(self.history, str):
            object.__setattr__(self, "history",
                               HistoryConfig.parse(self.history, 10))
        elif isinstance(self.history, dict):
            object.__setattr__(self, "history", HistoryConfig(**self.history))
        if self.chunk_size < 1:
            raise InvalidArgumentError("chunk_size must be >= 1")
        if self.decoding not in ("greedy", "top_k"):
            raise InvalidArgumentError(f"unknown decoding {self.decoding!r}")
        if self.token_budget < 1 or self.max_env_steps < 1:
            raise InvalidArgumentError("budgets must be >= 1")
        if self.execute_steps is not None and not (
                1 <= self.execute_steps <= self.chunk_size):
            raise InvalidArgumentError(
                "execute_steps must lie in [1, chunk_size]"
            )

    @property
    def steps_per_chunk(self) -> int:
        return self.execute_steps or self.chunk_size


@dataclass(frozen=True)
class PipelineConfig:
    """Two-stage recipe: optional post-training, then fine-tuning."""
    posttrain: TrainConfig = field(default_factory=lambda: TrainConfig(
        stage="posttrain", strategy=Strategy.WORLD_MODEL, steps=2000,
        w_v=1.0, w_a=0.0,
    ))
    finetune: TrainConfig = field(default_factory=TrainConfig)
    stage1_strategy: str = "world_model"
    clip_frames: int = 6
    history: HistoryConfig = field(
        default_factory=lambda: HistoryConfig(history=1, stride=10)
    )
    mask_history_actions: bool = False
    data_fraction: float = 1.0
    foreign_action_space: bool = True
    resume: bool = False

    def __post_init__(self):
        if self.stage1_strategy not in POSTTRAIN_STRATEGIES:
            raise InvalidArgumentError(
                f"unknown post-training strategy {self.stage1_strategy!r}"
            )
        if not 0.0 < self.data_fraction <= 1.0:
            raise InvalidArgumentError("data_fraction must lie in (0, 1]")
        if self.clip_frames < 2:
            raise InvalidArgumentError("clip_frames must be >= 2")


@dataclass(frozen=True)
class AblationConfig:
    strategies: Tuple[str, ...] = POSTTRAIN_STRATEGIES
    seeds: Tuple[int, ...] = (0, 1, 2)
    eval_episodes: int = 100
    eval_seed: int = 10_000
    data_fraction_arm: float = 0.1
    history_sweep: Tuple[str, ...] = ("1+0", "1+1", "1+2")
    joint_weights: Tuple[float, float] = (0.5, 1.0)
    run_data_fraction: bool = True
    run_joint: bool = True
    run_history: bool = True
    workers: int = 1

    def __post_init__(self):
        object.__setattr__(self, "strategies", tuple(self.strategies))
        object.__setattr__(self, "seeds", tuple(int(s) for s in self.seeds))
        object.__setattr__(self, "history_sweep", tuple(self.history_sweep))
        object.__setattr__(self, "joint_weights", tuple(self.joint_weights))
        unknown = [s for s in self.strategies
                   if s not in POSTTRAIN_STRATEGIES]
        if unknown:
            raise InvalidArgumentError(f"unknown strategy tags: {unknown}")
        if not self.seeds:
            raise InvalidArgumentError("at least one seed is required")
        if self.eval_episodes < 1:
            raise InvalidArgumentError("eval_episodes must be >= 1")


@dataclass
class RunManifest:
    """Everything needed to re-run a command and verify its artifacts."""
    run_id: str
    command: str
    config: Dict[str, Any]
    flags_hash: str
    inputs: Dict[str, str] = field(default_factory=dict)
    outputs: Dict[str, str] = field(default_factory=dict)
    checkpoints: List[str] = field(default_factory=list)
    metrics: List[str] = field(default_factory=list)
    toolkit_version: str = ""
    argv: List[str] = field(default_factory=list)

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)

    @classmethod
    def from_dict(cls, payload: Dict[str, Any]) -> "RunManifest":
        return cls(**payload)
