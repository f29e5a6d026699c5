"""Desk-scale 2D encoder-decoder predicting half-plane density from bark patches."""

from .data import build_patch_dataset, encode_patches, log_azimuths
from .network import EncoderDecoder, ModelSpec, load_checkpoint, save_checkpoint
from .training import (
    AdamState,
    BaselineMean,
    TrainConfig,
    TrainData,
    TrainResult,
    adam_step,
    baseline_mean,
    evaluate_loss,
    learning_rate,
    train,
)
