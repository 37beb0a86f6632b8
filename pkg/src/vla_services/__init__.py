"""
VLA Services - a desk-scale toolkit for unified vision-language-action models.

Text, images and actions share one discrete vocabulary so a single causal
transformer can be post-trained as a world model on action-free video and
then fine-tuned as a policy:
- Data Service: seeded block-arena demonstrations and episode stores
- Codec Service: vocabulary, patch VQ codebook and DCT+BPE action codec
- Training / Rollout Services: two-stage training and closed-loop evaluation
- Ablation Service: the post-training comparison suite and its report
"""

from .main import (
    create_ablation_service,
    create_codec_service,
    create_data_service,
    create_packing_service,
    create_report_service,
    create_rollout_service,
    create_training_service,
)

__version__ = "0.1.0"
__all__ = [
    "create_ablation_service",
    "create_codec_service",
    "create_data_service",
    "create_packing_service",
    "create_report_service",
    "create_rollout_service",
    "create_training_service",
]
