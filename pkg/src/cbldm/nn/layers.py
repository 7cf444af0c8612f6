from __future__ import annotations

import math

import numpy as np

from . import tensor as T
from .rng import RngStream
from .tensor import Tensor


class Module:
    """Attribute-registered parameter container."""

    def named_parameters(self, prefix=""):
        for name, value in vars(self).items():
            key = f"{prefix}{name}"
            if isinstance(value, Tensor) and value.requires_grad:
                yield key, value
            elif isinstance(value, Module):
                yield from value.named_parameters(key + ".")
            elif isinstance(value, (list, tuple)):
                for i, item in enumerate(value):
                    if isinstance(item, Module):
                        yield from item.named_parameters(f"{key}.{i}.")

    def parameters(self):
        return [p for _, p in self.named_parameters()]

    def state_dict(self):
        return {k: p.data for k, p in self.named_parameters()}

    def load_state_dict(self, state, prefix=""):
        for k, p in self.named_parameters():
            key = prefix + k
            if key not in state:
                raise KeyError(f"missing parameter {key!r}")
            arr = np.asarray(state[key])
            if arr.shape != p.shape:
                raise ValueError(f"{key}: shape {arr.shape} != {p.shape}")
            p.data = arr.astype(p.dtype).copy()

    def num_parameters(self):
        return sum(p.data.size for p in self.parameters())


def _param(arr, dtype):
    return Tensor(np.asarray(arr, dtype=dtype), requires_grad=True)


class Linear(Module):
    def __init__(self, n_in, n_out, rng: RngStream, dtype=np.float32, zero_init=False):
        if zero_init:
            w = np.zeros((n_in, n_out))
        else:
            w = rng.generator().standard_normal((n_in, n_out)) / math.sqrt(n_in)
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(n_out), dtype)

    def __call__(self, x):
        return T.affine(x, self.weight, self.bias)


class Conv2d(Module):
    def __init__(self, c_in, c_out, kernel, rng: RngStream, stride=1, padding=None,
                 dtype=np.float32, zero_init=False):
        kh, kw = (kernel, kernel) if np.isscalar(kernel) else kernel
        fan_in = c_in * kh * kw
        if zero_init:
            w = np.zeros((c_out, c_in, kh, kw))
        else:
            w = rng.generator().standard_normal((c_out, c_in, kh, kw)) / math.sqrt(fan_in)
        self.weight = _param(w, dtype)
        self.bias = _param(np.zeros(c_out), dtype)
        self.stride = stride
        self.padding = (kh // 2, kw // 2) if padding is None else padding

    def __call__(self, x):
        return T.conv2d(x, self.weight, self.bias, stride=self.stride, padding=self.padding)


class Conv1d(Module):
    """1-D convolution over (B, C, L), expressed as a (1, k) 2-D convolution."""

    def __init__(self, c_in, c_out, kernel, rng: RngStream, stride=1, dtype=np.float32, zero_init=False):
        self.conv = Conv2d(c_in, c_out, (1, kernel), rng, stride=(1, stride),
                           padding=(0, kernel // 2), dtype=dtype, zero_init=zero_init)

    def __call__(self, x):
        B, C, L = x.shape
        y = self.conv(T.reshape(x, (B, C, 1, L)))
        return T.reshape(y, (B, y.shape[1], y.shape[3]))


def upsample1d(x, factor=2):
    B, C, L = x.shape
    y = T.upsample2d(T.reshape(x, (B, C, 1, L)), factor)
    # upsample2d also repeats the singleton height axis
    y = T.reshape(y, (B, C, factor, L * factor))
    return y[:, :, 0, :]


class ResBlock(Module):
    """Two 3x3 convolutions with SiLU and an identity skip; optional embedding bias."""

    def __init__(self, channels, rng: RngStream, emb_dim=None, dtype=np.float32):
        self.conv1 = Conv2d(channels, channels, 3, rng, dtype=dtype)
        self.conv2 = Conv2d(channels, channels, 3, rng, dtype=dtype, zero_init=True)
        self.emb = Linear(emb_dim, channels, rng, dtype=dtype) if emb_dim else None

    def __call__(self, x, emb=None):
        h = self.conv1(T.silu(x))
        if self.emb is not None and emb is not None:
            e = self.emb(T.silu(emb))
            h = h + T.reshape(e, (e.shape[0], e.shape[1], 1, 1))
        h = self.conv2(T.silu(h))
        return x + h


class MLP(Module):
    def __init__(self, sizes, rng: RngStream, dtype=np.float32, zero_last=False):
        self.layers = [
            Linear(a, b, rng, dtype=dtype, zero_init=zero_last and i == len(sizes) - 2)
            for i, (a, b) in enumerate(zip(sizes[:-1], sizes[1:]))
        ]

    def __call__(self, x):
        for i, layer in enumerate(self.layers):
            x = layer(x)
            if i < len(self.layers) - 1:
                x = T.silu(x)
        return x


def sinusoidal_embedding(t, dim, dtype=np.float32):
    """Transformer-style timestep embedding, shape (len(t), dim)."""
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    half = dim // 2
    freqs = np.exp(-math.log(10000.0) * np.arange(half) / max(half, 1))
    args = t[:, None] * freqs[None, :]
    emb = np.concatenate([np.sin(args), np.cos(args)], axis=1)
    if dim % 2:
        emb = np.concatenate([emb, np.zeros((len(t), 1))], axis=1)
    return emb.astype(dtype)
