"""Compressive VAE for the PDF condition (1-D convolutional)."""
from __future__ import annotations

import numpy as np

from .nn import F, Conv1d, Linear, Module, RngStream, Tensor, sample_gaussian, upsample1d


def reshape_condition(g, shape):
    """Row-major fill of a PDF sample vector into (channels, length)."""
    g = np.asarray(g)
    channels, length = shape
    if g.shape[-1] != channels * length:
        raise ValueError(f"PDF has {g.shape[-1]} samples; condition shape {shape} needs {channels * length}")
    return g.reshape(g.shape[:-1] + (channels, length))


def kl_standard_normal(mu, logvar):
    """Closed-form KL(N(mu, exp(logvar)) || N(0, I)), summed over non-batch axes, batch-averaged."""
    terms = F.mul(0.5, mu * mu + F.exp(logvar) - logvar - 1.0)
    return F.mean(F.tsum(F.reshape(terms, (terms.shape[0], -1)), axis=1))


def kl_gaussians(mu_q, logvar_q, mu_p, logvar_p):
    """Closed-form KL(q || p) between diagonal Gaussians, summed per sample, batch-averaged."""
    diff = mu_q - mu_p
    terms = 0.5 * (logvar_p - logvar_q + (F.exp(logvar_q) + diff * diff) / F.exp(logvar_p) - 1.0)
    return F.mean(F.tsum(F.reshape(terms, (terms.shape[0], -1)), axis=1))


class ConditionVAE(Module):
    def __init__(self, cond_shape=(6, 100), latent_shape=(2, 25), widths=(16, 32, 32),
                 rng: RngStream | None = None, dtype=np.float32, dense_readout=False):
        rng = rng or RngStream(0)
        self.cond_shape = tuple(cond_shape)
        self.latent_shape = tuple(latent_shape)
        c_in, length = self.cond_shape
        c_lat, l_lat = self.latent_shape
        factor = length // l_lat
        if factor * l_lat != length or factor & (factor - 1):
            raise ValueError(f"length {length} must be a power-of-two multiple of latent length {l_lat}")
        self.n_down = int(np.log2(factor))
        w0, w1, w2 = widths
        self.enc_in = Conv1d(c_in, w0, 5, rng, dtype=dtype)
        self.enc_down = [Conv1d(w0 if i == 0 else w1, w1, 5, rng, stride=2, dtype=dtype)
                         for i in range(self.n_down)]
        self.enc_mid = Conv1d(w1, w2, 3, rng, dtype=dtype)
        self.enc_out = Conv1d(w2, 2 * c_lat, 3, rng, dtype=dtype)
        self.dec_in = Conv1d(c_lat, w2, 3, rng, dtype=dtype)
        self.dec_up = [Conv1d(w2 if i == 0 else w1, w1, 5, rng, dtype=dtype) for i in range(self.n_down)]
        self.dec_mid = Conv1d(w1, w0, 5, rng, dtype=dtype)
        self.dec_out = Conv1d(w0, c_in, 5, rng, dtype=dtype)
        n_lat, n_out = c_lat * l_lat, c_in * length
        self.readout = Linear(n_lat, n_out, rng, dtype=dtype, zero_init=True) if dense_readout else None

    def encode(self, c):
        h = F.silu(self.enc_in(c))
        for layer in self.enc_down:
            h = F.silu(layer(h))
        h = F.silu(self.enc_mid(h))
        out = self.enc_out(h)
        k = self.latent_shape[0]
        return out[:, :k], F.clip(out[:, k:], -10.0, 10.0)

    def decode(self, z):
        h = F.silu(self.dec_in(z))
        for layer in self.dec_up:
            h = F.silu(layer(upsample1d(h, 2)))
        h = F.silu(self.dec_mid(h))
        out = self.dec_out(h)
        if self.readout is not None:
            B = z.shape[0]
            dense = self.readout(F.reshape(z, (B, -1)))
            out = out + F.reshape(dense, (B,) + self.cond_shape)
        return out


def cvae_loss(model: ConditionVAE, c, rng: RngStream, beta_kl=1e-3):
    """Reconstruction MSE + beta * KL to N(0, I); returns (loss, components)."""
    c = c if isinstance(c, Tensor) else Tensor(c)
    mu, logvar = model.encode(c)
    eps = sample_gaussian(rng, mu.shape, dtype=mu.dtype)
    z = mu + F.exp(0.5 * logvar) * eps
    rec = model.decode(z)
    diff = rec - c
    l_rec = F.mean(diff * diff)
    kl = kl_standard_normal(mu, logvar)
    loss = l_rec + beta_kl * kl
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite condition-VAE loss")
    return loss, {"rec": float(l_rec.data), "kl": float(kl.data)}


def encode_condition(model: ConditionVAE, c):
    """Deterministic embedding c0: the posterior mean, shape (B, *latent_shape)."""
    c = np.asarray(c, dtype=np.float32)
    if c.shape[-2:] != model.cond_shape:
        raise ValueError(f"condition shape {c.shape[-2:]} does not match model {model.cond_shape}")
    single = c.ndim == 2
    mu, _ = model.encode(Tensor(c[None] if single else c))
    return mu.data[0] if single else mu.data
