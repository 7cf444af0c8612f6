"""Compressive VAE for the block Laplacian, with a prior conditioned on c0."""
from __future__ import annotations

import numpy as np

from .condvae import kl_gaussians
from .nn import F, MLP, Conv2d, Linear, Module, ResBlock, RngStream, Tensor, sample_gaussian

LOGVAR_CLAMP = 10.0


class ConditionalPrior(Module):
    """MLP mapping c0 to a diagonal Gaussian over the latent; N(0, I) at init."""

    def __init__(self, cond_dim, latent_shape, hidden=128, rng=None, dtype=np.float32):
        self.latent_shape = tuple(latent_shape)
        n = int(np.prod(latent_shape))
        self.mlp = MLP([cond_dim, hidden, hidden, 2 * n], rng or RngStream(0), dtype=dtype, zero_last=True)

    def __call__(self, c0):
        c0 = c0 if isinstance(c0, Tensor) else Tensor(c0)
        B = c0.shape[0]
        out = self.mlp(F.reshape(c0, (B, -1)))
        n = out.shape[1] // 2
        mu = F.reshape(out[:, :n], (B,) + self.latent_shape)
        logvar = F.clip(F.reshape(out[:, n:], (B,) + self.latent_shape), -LOGVAR_CLAMP, LOGVAR_CLAMP)
        return mu, logvar


class InputVAE(Module):
    """Asymmetric conv VAE: wide shallow encoder, narrower deeper residual decoder.

    The encoder sees c0 as extra constant channels; the decoder sees only z.
    """

    def __init__(self, block_shape=(4, 32, 32), latent_shape=(1, 8, 8), cond_dim=50,
                 enc_widths=(32, 64), dec_widths=(32, 16), cond_channels=4, prior_hidden=128,
                 dense_readout=True, init_logvar=0.0, latent_gain=1.0, data_scale=1.0,
                 rng: RngStream | None = None, dtype=np.float32):
        rng = rng or RngStream(0)
        if data_scale <= 0:
            raise ValueError("data_scale must be positive")
        self.block_shape = tuple(block_shape)
        # inputs are divided by data_scale and outputs multiplied back, so the
        # networks work on unit-scale values whatever the normalisation constant
        self.data_scale = float(data_scale)
        self.latent_shape = tuple(latent_shape)
        self.latent_gain = float(latent_gain)
        c_in, H, _ = self.block_shape
        c_lat, h_lat, _ = self.latent_shape
        factor = H // h_lat
        if factor * h_lat != H or factor & (factor - 1):
            raise ValueError(f"block size {H} must be a power-of-two multiple of latent size {h_lat}")
        self.n_down = int(np.log2(factor))
        e0, e1 = enc_widths
        d0, d1 = dec_widths
        self.cond_proj = Linear(cond_dim, cond_channels, rng, dtype=dtype)
        # the first convolution already strides, so no layer runs at full resolution
        self.enc_in = Conv2d(c_in + cond_channels, e0, 3, rng, stride=2, padding=1, dtype=dtype)
        self.enc_down = [Conv2d(e0 if i == 0 else e1, e1, 3, rng, stride=2, padding=1, dtype=dtype)
                         for i in range(self.n_down - 1)]
        e_last = e1 if self.n_down > 1 else e0
        self.enc_res = ResBlock(e_last, rng, dtype=dtype)
        self.enc_out = Conv2d(e_last, 2 * c_lat, 3, rng, dtype=dtype)
        self.enc_out.bias.data[c_lat:] = init_logvar

        self.dec_in = Conv2d(c_lat, d0, 3, rng, dtype=dtype)
        self.dec_res0 = ResBlock(d0, rng, dtype=dtype)
        self.dec_up = [Conv2d(d0 if i == 0 else d1, d1, 3, rng, dtype=dtype) for i in range(self.n_down)]
        # residual blocks at every upsampled scale except the full-resolution one
        self.dec_res = [ResBlock(d1, rng, dtype=dtype) for _ in range(self.n_down - 1)]
        self.dec_out = Conv2d(d1, c_in, 3, rng, dtype=dtype)
        n_lat = int(np.prod(self.latent_shape))
        n_out = int(np.prod(self.block_shape))
        self.readout = Linear(n_lat, n_out, rng, dtype=dtype, zero_init=True) if dense_readout else None
        self.prior = ConditionalPrior(cond_dim, latent_shape, prior_hidden, rng, dtype)

    def encode(self, x, c0):
        x = x if isinstance(x, Tensor) else Tensor(x)
        c0 = c0 if isinstance(c0, Tensor) else Tensor(c0)
        B, _, H, W = x.shape
        x = x * (1.0 / self.data_scale)
        proj = self.cond_proj(F.reshape(c0, (B, -1)))
        cmap = F.broadcast_to(F.reshape(proj, (B, proj.shape[1], 1, 1)), (B, proj.shape[1], H, W))
        h = F.silu(self.enc_in(F.concat([x, cmap], axis=1)))
        for layer in self.enc_down:
            h = F.silu(layer(h))
        h = self.enc_res(h)
        out = self.enc_out(F.silu(h))
        k = self.latent_shape[0]
        # the gain spreads codes well beyond the smallest posterior std the clamp allows
        return out[:, :k] * self.latent_gain, F.clip(out[:, k:], -LOGVAR_CLAMP, LOGVAR_CLAMP)

    def decode(self, z):
        z = z if isinstance(z, Tensor) else Tensor(z)
        h = self.dec_res0(self.dec_in(z))
        for i, conv in enumerate(self.dec_up):
            h = conv(F.upsample2d(F.silu(h), 2))
            if i < len(self.dec_res):
                h = self.dec_res[i](h)
        out = self.dec_out(F.silu(h))
        if self.readout is not None:
            B = z.shape[0]
            dense = self.readout(F.reshape(z, (B, -1)))
            out = out + F.reshape(dense, (B,) + self.block_shape)
        return out * self.data_scale


def prior_params(model: InputVAE, c0):
    return model.prior(c0)


def xvae_loss(model: InputVAE, x, c0, rng: RngStream, beta_kl=1e-3):
    """Reconstruction MSE + beta * KL(posterior || conditional prior).

    The MSE is measured in units of ``model.data_scale``.
    """
    x = x if isinstance(x, Tensor) else Tensor(x)
    c0 = c0 if isinstance(c0, Tensor) else Tensor(c0)
    mu_q, lv_q = model.encode(x, c0)
    eps = sample_gaussian(rng, mu_q.shape, dtype=mu_q.dtype)
    z = mu_q + F.exp(0.5 * lv_q) * eps
    rec = model.decode(z)
    diff = (rec - x) * (1.0 / model.data_scale)
    l_rec = F.mean(diff * diff)
    mu_p, lv_p = model.prior(c0)
    kl = kl_gaussians(mu_q, lv_q, mu_p, lv_p)
    loss = l_rec + beta_kl * kl
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite input-VAE loss")
    return loss, {"rec": float(l_rec.data), "kl": float(kl.data)}


def encode_input(model: InputVAE, x, c0):
    mu, logvar = model.encode(Tensor(np.asarray(x, np.float32)), Tensor(np.asarray(c0, np.float32)))
    return mu.data, logvar.data


def decode_latent(model: InputVAE, z):
    z = np.asarray(z, dtype=np.float32)
    if z.shape[1:] != model.latent_shape:
        raise ValueError(f"latent shape {z.shape[1:]} does not match model {model.latent_shape}")
    return model.decode(Tensor(z)).data
