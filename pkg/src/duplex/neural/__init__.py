"""Numpy multimodal classifier: encoders, fusion, mixup, pseudo-label SSL."""

from .checkpoint import (CheckpointError, ChecksumError, TaskMismatchError, VersionError,
                         load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint)
from .data import Example, collate, make_example, one_hot
from .gradcheck import grad_check
from .model import (TASKS, Batch, Mix, Model, ModelConfig, NumericalError, audio_encode,
                    forward, gated_bilinear, predict, predict_proba, text_encode)
from .train import (Adam, AugmentState, TrainConfig, fit, loss_semi, loss_sup, mixup,
                    predict_examples, pseudo_labels, sample_lambda, train_step)

__all__ = [
    "Adam", "AugmentState", "Batch", "CheckpointError", "ChecksumError", "Example", "Mix",
    "Model", "ModelConfig", "NumericalError", "TASKS", "TaskMismatchError", "TrainConfig",
    "VersionError", "audio_encode", "collate", "fit", "forward", "gated_bilinear", "grad_check",
    "load_checkpoint", "loss_semi", "loss_sup", "make_example", "mixup", "one_hot", "predict",
    "predict_examples", "predict_proba", "pseudo_labels", "read_checkpoint", "sample_lambda",
    "save_checkpoint", "text_encode", "train_step", "write_checkpoint",
]
