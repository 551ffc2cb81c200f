"""Desk-scale ViT training laboratory with attention-guided token skipping."""

from .tensor import Tensor, precision, set_precision
from .tokendrop import DropSchedule, TokenStash
from .vit import MODEL_PRESETS, ModelConfig, TokenBatch, ViT

__all__ = [
    "Tensor",
    "precision",
    "set_precision",
    "DropSchedule",
    "TokenStash",
    "ModelConfig",
    "MODEL_PRESETS",
    "TokenBatch",
    "ViT",
]
