"""
YAML run configuration with CLI > file > default precedence.

Sections map one-to-one onto the dataclasses in ``entities.configs``; the
``model`` section stays a plain mapping until the vocabulary size is known.
"""
import logging
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any, Dict, Mapping, Optional

import yaml

from ..entities import (
    AblationConfig,
    CodecConfig,
    DataConfig,
    DataError,
    HistoryConfig,
    InvalidArgumentError,
    ModelConfig,
    PipelineConfig,
    RolloutConfig,
    TrainConfig,
)

logger = logging.getLogger(__name__)

SECTIONS = ("data", "codecs", "model", "posttrain", "finetune", "pipeline",
            "rollout", "ablation")
DEFAULT_STRIDE = 10

Overrides = Mapping[str, Mapping[str, Any]]


def _defaults() -> Dict[str, Dict[str, Any]]:
    pipeline = PipelineConfig()
    model = {f.name: f.default for f in fields(ModelConfig)
             if f.name != "vocab_size"}
    pipeline_fields = {f.name: getattr(pipeline, f.name)
                       for f in fields(PipelineConfig)
                       if f.name not in ("posttrain", "finetune")}
    return {
        "data": asdict(DataConfig()),
        "codecs": asdict(CodecConfig()),
        "model": model,
        "posttrain": asdict(pipeline.posttrain),
        "finetune": asdict(pipeline.finetune),
        "pipeline": pipeline_fields,
        "rollout": {f.name: getattr(RolloutConfig(), f.name)
                    for f in fields(RolloutConfig)},
        "ablation": asdict(AblationConfig()),
    }


def _coerce_history(value: Any) -> HistoryConfig:
    if isinstance(value, HistoryConfig):
        return value
    if isinstance(value, str):
        return HistoryConfig.parse(value, DEFAULT_STRIDE)
    if isinstance(value, Mapping):
        return HistoryConfig(**value)
    raise InvalidArgumentError(f"cannot read a history window from {value!r}")


def read_config_file(path: Optional[Path]) -> Dict[str, Dict[str, Any]]:
    """Parse the YAML file; a missing path means an empty configuration."""
    if path is None:
        return {}
    if not path.exists():
        raise DataError("config file not found", path)
    try:
        payload = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
    except yaml.YAMLError as e:
        raise DataError(f"malformed YAML: {e}", path)
    if not isinstance(payload, dict):
        raise DataError("config root must be a mapping", path)
    for section, values in payload.items():
        if section not in SECTIONS:
            raise InvalidArgumentError(f"unknown config section {section!r}")
        if not isinstance(values, dict):
            raise InvalidArgumentError(
                f"config section {section!r} must be a mapping"
            )
    return payload


@dataclass
class ResolvedConfig:
    """Every section resolved, plus where each value came from."""
    data: DataConfig
    codecs: CodecConfig
    model: Dict[str, Any]
    pipeline: PipelineConfig
    rollout: RolloutConfig
    ablation: AblationConfig
    sources: Dict[str, str] = field(default_factory=dict)

    def model_config(self, vocab_size: int) -> ModelConfig:
        return ModelConfig(vocab_size=vocab_size, **self.model)

    def snapshot(self) -> Dict[str, Any]:
        return {
            "data": asdict(self.data),
            "codecs": asdict(self.codecs),
            "model": dict(self.model),
            "pipeline": asdict(self.pipeline),
            "rollout": asdict(self.rollout),
            "ablation": asdict(self.ablation),
        }


def resolve_config(file_values: Optional[Overrides] = None,
                   cli_values: Optional[Overrides] = None) -> ResolvedConfig:
    """
    Layer CLI flags over the file over the dataclass defaults.

    Unknown keys in either layer are an error. CLI values of ``None`` mean
    "flag not given" and are skipped.
    """
    merged = _defaults()
    sources = {f"{s}.{k}": "default" for s, keys in merged.items()
               for k in keys}
    for origin, layer in (("file", file_values or {}),
                          ("cli", cli_values or {})):
        for section, values in layer.items():
            if section not in merged:
                raise InvalidArgumentError(
                    f"unknown config section {section!r}"
                )
            for key, value in values.items():
                if value is None:
                    continue
                if key not in merged[section]:
                    raise InvalidArgumentError(
                        f"unknown config key {section}.{key}"
                    )
                merged[section][key] = value
                sources[f"{section}.{key}"] = origin

    for name in sorted(sources):
        if sources[name] != "default":
            section, key = name.split(".", 1)
            logger.info("config %s = %r (from %s)", name,
                        merged[section][key], sources[name])

    try:
        pipeline_values = dict(merged["pipeline"])
        pipeline_values["history"] = _coerce_history(
            pipeline_values["history"]
        )
        rollout_values = dict(merged["rollout"])
        rollout_values["history"] = _coerce_history(rollout_values["history"])
        resolved = ResolvedConfig(
            data=DataConfig(**merged["data"]),
            codecs=CodecConfig(**merged["codecs"]),
            model=dict(merged["model"]),
            pipeline=PipelineConfig(
                posttrain=TrainConfig(**merged["posttrain"]),
                finetune=TrainConfig(**merged["finetune"]),
                **pipeline_values,
            ),
            rollout=RolloutConfig(**rollout_values),
            ablation=AblationConfig(**merged["ablation"]),
            sources=sources,
        )
    except TypeError as e:
        raise InvalidArgumentError(f"invalid configuration: {e}")
    ModelConfig(vocab_size=1, **resolved.model)
    return resolved


def load_config(path: Optional[Path] = None,
                cli_values: Optional[Overrides] = None) -> ResolvedConfig:
    return resolve_config(read_config_file(path), cli_values)
