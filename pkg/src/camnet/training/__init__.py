"""Optimisers, training loops, evaluation and checkpoints."""

from camnet.training.checkpoint import decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint
from camnet.training.loops import (
    EpochRecord,
    EvalResult,
    Metrics,
    TrainConfig,
    classification_loss,
    evaluate,
    fit,
    train_classifier,
    train_translator,
    translation_loss,
)
from camnet.training.optim import Adam, Optimizer, SGDMomentum, make_optimizer

__all__ = [
    "decode_checkpoint", "encode_checkpoint", "load_checkpoint", "save_checkpoint",
    "EpochRecord", "EvalResult", "Metrics", "TrainConfig", "classification_loss", "evaluate", "fit",
    "train_classifier", "train_translator", "translation_loss",
    "Adam", "Optimizer", "SGDMomentum", "make_optimizer",
]
