"""Transformer encoder with learned convex layer mixing, trained as a masked language model."""

from .autodiff import Tape, Tensor, finite_diff_check, no_grad
from .encoder import EncoderConfig, EncoderState, encode, forward, init_encoder, lm_logits
from .mixing import PRESETS, MixWeights, WiringMode, combine, residual_combine
from .training import TrainConfig, train

__all__ = [
    "PRESETS", "EncoderConfig", "EncoderState", "MixWeights", "Tape", "Tensor", "TrainConfig",
    "WiringMode", "combine", "encode", "finite_diff_check", "forward", "init_encoder",
    "lm_logits", "no_grad", "residual_combine", "train",
]
