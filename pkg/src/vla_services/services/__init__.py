from .data_service import DataService
from .codec_service import CodecService
from .packing_service import PackingService
from .training_service import TrainingService
from .rollout_service import RolloutService
from .report_service import ReportService
from .ablation_service import AblationService

__all__ = [
    'DataService', 'CodecService', 'PackingService', 'TrainingService',
    'RolloutService', 'ReportService', 'AblationService',
]
