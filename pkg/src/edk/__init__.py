"""Compress old interaction logs into a frozen knowledge base and reuse it in CTR backbones."""

from .config import ExperimentConfig, load_config
from .pipeline import KnowledgeBaseParams, TrainedBackbone, ablate, compress, evaluate, pattern_stats, train_backbone

__version__ = "0.1.0"

__all__ = [
    "ExperimentConfig",
    "KnowledgeBaseParams",
    "TrainedBackbone",
    "ablate",
    "compress",
    "evaluate",
    "load_config",
    "pattern_stats",
    "train_backbone",
]
