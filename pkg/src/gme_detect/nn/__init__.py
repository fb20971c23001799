"""Small numpy neural-network engine: 1-D conv stack, SE block, Adam."""

from .checkpoint import Checkpoint, CheckpointError, checkpoint_bytes, load_checkpoint, parse_checkpoint
from .layers import (
    BatchNorm,
    Conv1D,
    Dense,
    GlobalAvgPool,
    MaxPool1D,
    ReLU,
    SqueezeExcite,
    sigmoid,
    softmax,
    softmax_cross_entropy,
)
from .model import Model, ModelSpec, build_model, reference_spec
from .optim import AdamState, adam_step

__all__ = [
    "AdamState",
    "BatchNorm",
    "Checkpoint",
    "CheckpointError",
    "Conv1D",
    "Dense",
    "GlobalAvgPool",
    "MaxPool1D",
    "Model",
    "ModelSpec",
    "ReLU",
    "SqueezeExcite",
    "adam_step",
    "build_model",
    "checkpoint_bytes",
    "load_checkpoint",
    "parse_checkpoint",
    "reference_spec",
    "sigmoid",
    "softmax",
    "softmax_cross_entropy",
]
