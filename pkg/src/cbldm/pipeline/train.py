"""The three training stages and their checkpoints."""
from __future__ import annotations

import logging
import time

import numpy as np

from ..condvae import ConditionVAE, cvae_loss, encode_condition
from ..diffusion import Denoiser, ddm_loss, make_schedule
from ..latentvae import InputVAE, decode_latent, encode_input, prior_params, xvae_loss
from ..nn import F, RngStream, Tape, Tensor, make_optimizer
from .checkpoint import load_checkpoint, save_checkpoint
from .data import TrainingSet
from .profiles import Profile

log = logging.getLogger(__name__)


class StageOrderError(RuntimeError):
    pass


def build_cvae(profile: Profile, seed=0):
    return ConditionVAE(profile.cond_shape, profile.cond_latent, profile.cvae_widths,
                        rng=RngStream(seed).child("cvae"), dense_readout=profile.cvae_dense_readout)


def build_xvae(profile: Profile, seed=0):
    return InputVAE(profile.block_shape, profile.latent_shape, profile.cond_dim,
                    enc_widths=profile.xvae_enc_widths, dec_widths=profile.xvae_dec_widths,
                    cond_channels=profile.xvae_cond_channels, prior_hidden=profile.prior_hidden,
                    dense_readout=profile.xvae_dense_readout, init_logvar=profile.xvae_init_logvar,
                    latent_gain=profile.xvae_latent_gain, data_scale=profile.xvae_data_scale,
                    rng=RngStream(seed).child("xvae"))


def build_denoiser(profile: Profile, seed=0):
    return Denoiser(profile.latent_shape, profile.cond_dim, profile.ddm_width, profile.ddm_blocks,
                    profile.ddm_cond_channels, profile.ddm_emb_dim, rng=RngStream(seed).child("ddm"))


def _train_loop(model, n, loss_fn, steps, batch, lr, profile: Profile, stream: RngStream,
                grad_hook=None, tag=""):
    """Mini-batch training with cosine learning-rate decay; returns the last loss components."""
    params = model.parameters()
    opt = make_optimizer(profile.optimizer, params, lr, profile.weight_decay)
    batches, noise = stream.child("batch"), stream.child("noise")
    comps, t0 = {}, time.time()
    size = min(batch, n)
    for s in range(steps):
        opt.lr = lr * 0.5 * (1.0 + np.cos(np.pi * s / steps))
        idx = np.sort(batches.generator().choice(n, size, replace=False))
        with Tape() as tape:
            loss, comps = loss_fn(idx, noise)
        grads = tape.gradient(loss, params)
        if grad_hook is not None:
            grads = grad_hook(grads)
        opt.step(grads)
        if s % 500 == 0 or s == steps - 1:
            log.info("%s step %d/%d loss %.4g %s (%.1fs)", tag, s + 1, steps, float(loss.data), comps,
                     time.time() - t0)
    return comps


# ------------------------------------------------------------------ stage 1

def train_cvae(profile: Profile, data: TrainingSet, seed=0):
    model = build_cvae(profile, seed)
    conds = data.conds

    def loss_fn(idx, noise):
        return cvae_loss(model, conds[idx], noise, profile.cvae_beta_kl)

    _train_loop(model, len(data), loss_fn, profile.cvae_steps, profile.cvae_batch, profile.cvae_lr, profile,
                RngStream(seed).child("train-cvae"), tag="cvae")
    mu = encode_condition(model, conds)
    rec = float(np.mean((model.decode(Tensor(mu)).data - conds) ** 2))
    meta = {"rec": rec, "steps": profile.cvae_steps,
            "converged": float(np.isfinite(rec) and rec < profile.cvae_converged_rec)}
    log.info("cvae posterior-mean reconstruction MSE %.3g, converged=%d", rec, meta["converged"])
    return model, meta


# ------------------------------------------------------------------ stage 2

def train_xvae(profile: Profile, data: TrainingSet, cvae: ConditionVAE, seed=0, cvae_meta=None):
    if cvae_meta is not None and not cvae_meta.get("converged"):
        raise StageOrderError("condition VAE has not converged; train it before the input VAE")
    model = build_xvae(profile, seed)
    c0 = encode_condition(cvae, data.conds).astype(np.float32)
    blocks = data.blocks
    beta = profile.xvae_beta_kl
    prior_ids = {id(p) for p in model.prior.parameters()}
    params = model.parameters()

    def loss_fn(idx, noise):
        return xvae_loss(model, blocks[idx], c0[idx], noise, beta)

    def hook(grads):
        # the prior sees only the KL term; rescale so it fits at unit weight whatever beta is
        if beta <= 0:
            return grads
        return [g / beta if id(p) in prior_ids else g for p, g in zip(params, grads)]

    stream = RngStream(seed).child("train-xvae")
    _train_loop(model, len(data), loss_fn, profile.xvae_steps, profile.xvae_batch, profile.xvae_lr, profile,
                stream, grad_hook=hook, tag="xvae")
    if profile.xvae_refit_copies > 0 and model.readout is not None:
        refit_readout(model, blocks, c0, stream.child("refit"), profile.xvae_refit_copies, profile.xvae_refit_ridge)
    if profile.prior_refit:
        refit_prior(model, blocks, c0, profile.prior_refit_ridge)
    mu, _ = encode_input(model, blocks, c0)
    # in units of data_scale, like the training loss
    rec = float(np.mean(((decode_latent(model, mu) - blocks) / model.data_scale) ** 2))
    meta = {"rec": rec, "steps": profile.xvae_steps,
            "converged": float(np.isfinite(rec) and rec < profile.xvae_converged_rec)}
    log.info("xvae posterior-mean reconstruction MSE %.3g, converged=%d", rec, meta["converged"])
    return model, meta


def refit_readout(model: InputVAE, blocks, c0, rng: RngStream, copies=8, ridge=1e-2):
    """Exact least-squares solve for the dense readout with everything else frozen.

    The design rows are posterior samples, ``copies`` per structure, so the
    solution minimises the same expected reconstruction error the training
    loss estimates. Returns the relative MSE before and after.
    """
    mu, lv = encode_input(model, blocks, c0)
    n = len(mu)
    xi = rng.generator().standard_normal((copies,) + mu.shape)
    z = (mu[None] + np.exp(0.5 * lv)[None] * xi).reshape((copies * n,) + mu.shape[1:]).astype(np.float32)
    lin = model.readout
    R = z.reshape(len(z), -1).astype(np.float64)
    w0, b0 = lin.weight.data.astype(np.float64), lin.bias.data.astype(np.float64)
    ds = model.data_scale
    target = np.tile(blocks.reshape(n, -1) / ds, (copies, 1))
    rest = decode_latent(model, z).reshape(len(z), -1) / ds - (R @ w0 + b0)
    before = float(np.mean((rest + R @ w0 + b0 - target) ** 2))
    A = np.hstack([R, np.ones((len(R), 1))])
    sol = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ (target - rest))
    lin.weight.data = sol[:-1].astype(lin.weight.dtype)
    lin.bias.data = sol[-1].astype(lin.bias.dtype)
    after = float(np.mean((rest + A @ sol - target) ** 2))
    log.info("xvae readout refit: sampled relative MSE %.3g -> %.3g", before, after)
    return before, after


def refit_prior(model: InputVAE, blocks, c0, ridge=1e-6):
    """Closed-form solve for the prior's output layer at the KL optimum.

    KL(q || p) vanishes when the prior reproduces each posterior's mean and
    log-variance, so the last layer is the ridge least-squares map from the
    prior's hidden features to (mu_q, logvar_q). Returns the RMS mean error.
    """
    mu, lv = encode_input(model, blocks, c0)
    n = len(mu)
    mlp = model.prior.mlp
    h = Tensor(np.asarray(c0, np.float32).reshape(n, -1))
    for layer in mlp.layers[:-1]:
        h = F.silu(layer(h))
    A = np.hstack([h.data.astype(np.float64), np.ones((n, 1))])
    Y = np.hstack([mu.reshape(n, -1), lv.reshape(n, -1)]).astype(np.float64)
    sol = np.linalg.solve(A.T @ A + ridge * np.eye(A.shape[1]), A.T @ Y)
    last = mlp.layers[-1]
    last.weight.data = sol[:-1].astype(last.weight.dtype)
    last.bias.data = sol[-1].astype(last.bias.dtype)
    mp, _ = prior_params(model, Tensor(np.asarray(c0, np.float32)))
    err = float(np.sqrt(np.mean((mp.data - mu) ** 2)))
    log.info("prior refit: RMS mean error %.3g (posterior mean RMS %.3g)", err, float(np.sqrt(np.mean(mu ** 2))))
    return err


# ------------------------------------------------------------------ stage 3

def latent_dataset(cvae, xvae, data: TrainingSet):
    """Frozen-encoder targets for the denoiser: c0, posterior (mu, logvar), and the latent scale."""
    c0 = encode_condition(cvae, data.conds).astype(np.float32)
    mu, lv = encode_input(xvae, data.blocks, c0)
    scale = np.float32(np.sqrt(np.mean(mu.astype(np.float64) ** 2)))
    return c0, mu, lv, float(scale)


def train_ddm(profile: Profile, data: TrainingSet, cvae, xvae, seed=0, xvae_meta=None):
    if xvae_meta is not None and not xvae_meta.get("converged"):
        raise StageOrderError("input VAE has not converged; train it before the diffusion model")
    model = build_denoiser(profile, seed)
    schedule = make_schedule(profile.T, profile.beta_start, profile.beta_end)
    c0, mu, lv, scale = latent_dataset(cvae, xvae, data)
    std = np.exp(0.5 * lv)

    def loss_fn(idx, noise):
        # z0 ~ q(z | x, c0), expressed in units of the latent scale
        xi = noise.generator().standard_normal(mu[idx].shape).astype(np.float32)
        z0 = (mu[idx] + std[idx] * xi) / scale
        loss = ddm_loss(model, z0, c0[idx], schedule, noise)
        return loss, {"l1": float(loss.data)}

    comps = _train_loop(model, len(data), loss_fn, profile.ddm_steps, profile.ddm_batch, profile.ddm_lr,
                        profile, RngStream(seed).child("train-ddm"), tag="ddm")
    meta = {"l1": comps.get("l1", float("nan")), "steps": profile.ddm_steps, "latent_scale": scale,
            "converged": float(np.isfinite(comps.get("l1", np.nan)))}
    return model, meta


# ------------------------------------------------------------------ checkpoints

def save_stage(path, model, meta: dict, profile: Profile):
    tensors = {f"model.{k}": v for k, v in model.state_dict().items()}
    tensors.update({f"meta.{k}": np.float32(v) for k, v in meta.items()})
    save_checkpoint(path, tensors, profile.hash())


def load_stage(path, stage: str, profile: Profile, seed=0):
    """Rebuild a model of ``stage`` ('cvae', 'xvae', 'ddm') from a checkpoint."""
    tensors, _ = load_checkpoint(path, expected_hash=profile.hash())
    builder = {"cvae": build_cvae, "xvae": build_xvae, "ddm": build_denoiser}[stage]
    model = builder(profile, seed)
    model.load_state_dict({k[6:]: v for k, v in tensors.items() if k.startswith("model.")})
    meta = {k[5:]: float(v) for k, v in tensors.items() if k.startswith("meta.")}
    return model, meta
