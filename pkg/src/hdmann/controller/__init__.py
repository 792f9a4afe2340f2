"""Embedding controller: autodiff engine, network, losses, optimizer, training."""

from .autodiff import Tape, TapeNode, Tensor
from .losses import RegularizerSpec, aux_loss, log_loss, occupancy_loss, total_loss
from .network import (
    Architecture,
    ControllerParams,
    forward,
    init_params,
    load_checkpoint,
    save_checkpoint,
)
from .optim import Adam, AdamConfig, adam_step
from .training import (
    TrainingConfig,
    TrainingResult,
    TrainingStepRecord,
    embed_episode,
    infer,
    run_training,
    train_episode,
)

__all__ = [
    "Adam", "AdamConfig", "Architecture", "ControllerParams", "RegularizerSpec", "Tape", "TapeNode",
    "Tensor", "TrainingConfig", "TrainingResult", "TrainingStepRecord", "adam_step", "aux_loss",
    "embed_episode", "forward", "infer", "init_params", "load_checkpoint", "log_loss",
    "occupancy_loss", "run_training", "save_checkpoint", "total_loss", "train_episode",
]
