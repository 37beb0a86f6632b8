from .vision_codec import ImageTokenizer, PatchVQTokenizer
from .action_codec import ActionTokenizer
from .vocab import TextTokenizer
from .sequence_builder import SequenceBuilder
from .file_writer import FileWriter
from .episode_store import EpisodeStore
from .stage_graph import Stage, StageGraph
from .config_loader import ResolvedConfig, load_config, resolve_config

__all__ = ['ImageTokenizer', 'PatchVQTokenizer', 'ActionTokenizer', 'TextTokenizer', 'SequenceBuilder', 'FileWriter', 'EpisodeStore', 'Stage', 'StageGraph', 'ResolvedConfig', 'load_config', 'resolve_config']
