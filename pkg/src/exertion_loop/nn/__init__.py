"""Minimal numpy network kernel for the two fixed architectures used here."""

from .checkpoint import load_checkpoint, load_module, save_checkpoint, save_module, state_entries
from .layers import (
    AdaptiveAvgPool1d,
    BatchNorm1d,
    Conv1d,
    Flatten,
    Linear,
    MaxPool1d,
    Module,
    Parameter,
    ReLU,
    Sequential,
    Swish,
    relu,
    swish,
)
from .losses import cross_entropy, smooth_l1
from .optim import Adam, AdamState, adam_step

__all__ = [
    "AdaptiveAvgPool1d", "Adam", "AdamState", "BatchNorm1d", "Conv1d", "Flatten", "Linear",
    "MaxPool1d", "Module", "Parameter", "ReLU", "Sequential", "Swish", "adam_step",
    "cross_entropy", "load_checkpoint", "load_module", "relu", "save_checkpoint", "save_module",
    "smooth_l1", "state_entries", "swish",
]
