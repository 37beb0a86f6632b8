from typing import Optional

from .services import (
    AblationService,
    CodecService,
    DataService,
    PackingService,
    ReportService,
    RolloutService,
    TrainingService,
)
from .core import EpisodeStore, FileWriter
from .core.codec_bundle import CodecBundle
from .entities import RolloutConfig


def create_data_service() -> DataService:
    """
    Factory function to create a configured data service.

    This is like a recipe that assembles the ingredients (an episode store
    backed by an atomic file writer) into a working dataset kitchen.
    """
    return DataService(EpisodeStore(FileWriter()))


def create_codec_service() -> CodecService:
    return CodecService(FileWriter())


def create_packing_service(bundle: CodecBundle, max_seq_len: int = 1024,
                           mask_history_actions: bool = False
                           ) -> PackingService:
    return PackingService(bundle, max_seq_len, mask_history_actions)


def create_training_service(progress: bool = False) -> TrainingService:
    return TrainingService(FileWriter(), progress=progress)


def create_rollout_service(cfg: Optional[RolloutConfig] = None
                           ) -> RolloutService:
    return RolloutService(cfg or RolloutConfig())


def create_report_service() -> ReportService:
    """
    Factory function to create a configured report service.

    Like assembling a scorekeeper's desk - tables, sign tests and plots,
    all writing through the same file writer.
    """
    return ReportService(FileWriter())


def create_ablation_service(progress: bool = False) -> AblationService:
    """
    Factory function to create a fully wired AblationService.

    Returns:
        AblationService: data, training and report services sharing one
        file writer
    """
    file_writer = FileWriter()
    return AblationService(
        DataService(EpisodeStore(file_writer)),
        TrainingService(file_writer, progress=progress),
        ReportService(file_writer),
        file_writer,
    )
