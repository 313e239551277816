"""Attention-fused, class-balanced severity classification over expression features."""

from .data import ClassLabel, Dataset, SubjectSample, SyntheticSpec, load_dataset, synth_generate, write_dataset
from .loss import LossConfig, class_weights, focal_loss
from .metrics import MetricsReport, evaluate
from .model import ArchConfig, ModelParams, forward, init_params, predict
from .train import TrainConfig, cross_validate, train

__version__ = "0.1.0"

__all__ = [
    "ArchConfig", "ClassLabel", "Dataset", "LossConfig", "MetricsReport", "ModelParams", "SubjectSample",
    "SyntheticSpec", "TrainConfig", "class_weights", "cross_validate", "evaluate", "focal_loss", "forward",
    "init_params", "load_dataset", "predict", "synth_generate", "train", "write_dataset",
]
