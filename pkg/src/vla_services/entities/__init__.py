from .entities import (
    ActionChunk,
    Block,
    BpeModel,
    EnvState,
    Episode,
    Goal,
    HistoryConfig,
    Modality,
    NormalizationStats,
    Span,
    SpecialToken,
    Strategy,
    TaskKind,
    TokenSequence,
    VideoClip,
    Vocabulary,
    VQCodebook,
)
from .configs import (
    POSTTRAIN_STRATEGIES,
    AblationConfig,
    CodecConfig,
    DataConfig,
    ModelConfig,
    PipelineConfig,
    RolloutConfig,
    RunManifest,
    TrainConfig,
)
from .errors import (
    ArtifactNotFoundError,
    ContextOverflowError,
    CorruptStreamError,
    DataError,
    InvalidArgumentError,
    MalformedGenerationError,
    ManifestMismatchError,
    RunLockedError,
    SequenceTooLongError,
    TrainingDivergedError,
    VlaError,
)

__all__ = [
    'ActionChunk', 'Block', 'BpeModel', 'EnvState', 'Episode', 'Goal',
    'HistoryConfig', 'Modality', 'NormalizationStats', 'Span',
    'SpecialToken', 'Strategy', 'TaskKind', 'TokenSequence', 'VideoClip',
    'Vocabulary', 'VQCodebook',
    'POSTTRAIN_STRATEGIES', 'AblationConfig', 'CodecConfig', 'DataConfig',
    'ModelConfig', 'PipelineConfig', 'RolloutConfig', 'RunManifest',
    'TrainConfig',
    'ArtifactNotFoundError', 'ContextOverflowError', 'CorruptStreamError',
    'DataError', 'InvalidArgumentError', 'MalformedGenerationError',
    'ManifestMismatchError', 'RunLockedError', 'SequenceTooLongError',
    'TrainingDivergedError', 'VlaError',
]
