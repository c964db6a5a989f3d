"""Residual U-net, multitask loss, training and checkpoints."""

from .checkpoint import Checkpoint, CheckpointError, CheckpointMismatchError, load_checkpoint, save_checkpoint
from .loss import LossBreakdown, multitask_loss
from .train import NumericError, TrainConfig, predict, sgd_step, train
from .unet import ModelConfig, ModelConfigError, ModelParams, StaleCacheError, backward, init_params, unet_forward
