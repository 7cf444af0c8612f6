"""Minimal numpy autodiff substrate used by the three trainable models."""
from . import tensor as F
from .layers import MLP, Conv1d, Conv2d, Linear, Module, ResBlock, sinusoidal_embedding, upsample1d
from .optim import Adan, AdamW, make_optimizer
from .rng import RngStream, sample_gaussian
from .tensor import ShapeError, Tape, Tensor, grad_eval

__all__ = [
    "F", "Tensor", "Tape", "ShapeError", "grad_eval",
    "Module", "Linear", "Conv1d", "Conv2d", "ResBlock", "MLP", "sinusoidal_embedding", "upsample1d",
    "AdamW", "Adan", "make_optimizer", "RngStream", "sample_gaussian",
]
