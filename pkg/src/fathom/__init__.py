"""Federated multi-task hierarchical attention over multivariate sensor
time series, on a from-scratch float64 autodiff core."""

from .config import RunConfig, SynthConfig
from .data import SplitSpec, TaskDataset, synth_generate, synth_splits
from .federation import FederatedTrainer, JointTrainer, MessageLog, fit
from .model import MultiTaskModel
from .tensor import Tape, Tensor

__all__ = [
    "FederatedTrainer",
    "JointTrainer",
    "MessageLog",
    "MultiTaskModel",
    "RunConfig",
    "SplitSpec",
    "SynthConfig",
    "Tape",
    "TaskDataset",
    "Tensor",
    "fit",
    "synth_generate",
    "synth_splits",
]

__version__ = "0.1.0"
