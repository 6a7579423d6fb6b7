from .data import Dataset, benchmark_seeds, build_dataset, class_mean_dims
from .optim import AdamState, adam_step, lr_schedule
from .targets import EncodedTargets, encode_targets, targets_to_outputs
from .trainer import TrainConfig, TrainResult, train, train_student, train_teacher

__all__ = [
    "AdamState",
    "Dataset",
    "EncodedTargets",
    "TrainConfig",
    "TrainResult",
    "adam_step",
    "benchmark_seeds",
    "build_dataset",
    "class_mean_dims",
    "encode_targets",
    "lr_schedule",
    "targets_to_outputs",
    "train",
    "train_student",
    "train_teacher",
]
