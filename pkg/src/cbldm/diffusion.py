"""Latent DDPM: schedule, forward noising, denoiser, ancestral and skip sampling."""
from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .nn import F, MLP, Conv2d, Linear, Module, ResBlock, RngStream, Tensor, sample_gaussian
from .nn.layers import sinusoidal_embedding


class PlanError(ValueError):
    pass


@dataclass(frozen=True)
class NoiseSchedule:
    betas: np.ndarray       # index t = 1..T stored at position t; position 0 unused (0)
    alphas: np.ndarray      # alphas[0] = 1
    alpha_bars: np.ndarray  # alpha_bars[0] = 1 by convention

    @property
    def T(self):
        return len(self.betas) - 1

    def check_t(self, t):
        t = np.asarray(t)
        if np.any(t < 1) or np.any(t > self.T):
            raise ValueError(f"t must lie in [1, {self.T}], got {t}")


def schedule_from_betas(betas) -> NoiseSchedule:
    betas = np.asarray(betas, dtype=np.float64)
    if betas.ndim != 1 or betas.size < 1 or np.any(betas <= 0) or np.any(betas >= 1):
        raise ValueError("betas must be a non-empty vector in (0, 1)")
    b = np.concatenate([[0.0], betas])
    a = 1.0 - b
    return NoiseSchedule(b, a, np.cumprod(a))


def make_schedule(T, beta_start=1e-4, beta_end=0.02) -> NoiseSchedule:
    """Linear betas from beta_start to beta_end over T steps."""
    if T < 1 or not 0 < beta_start <= beta_end < 1:
        raise ValueError(f"invalid schedule T={T}, beta range ({beta_start}, {beta_end})")
    return schedule_from_betas(np.linspace(beta_start, beta_end, T))


def q_sample(z0, t, eps, schedule: NoiseSchedule):
    """z_t = sqrt(abar_t) z0 + sqrt(1 - abar_t) eps; ``t`` scalar or per-batch."""
    schedule.check_t(t)
    ab = schedule.alpha_bars[np.asarray(t)]
    z0 = np.asarray(z0)
    if np.ndim(ab):
        ab = ab.reshape((-1,) + (1,) * (z0.ndim - 1))
    return np.sqrt(ab) * z0 + np.sqrt(1.0 - ab) * np.asarray(eps)


def posterior_std(schedule: NoiseSchedule, t):
    if t == 1:
        return 0.0
    ab = schedule.alpha_bars
    return float(np.sqrt(schedule.betas[t] * (1.0 - ab[t - 1]) / (1.0 - ab[t])))


def ancestral_step(z_t, t, eps_hat, schedule: NoiseSchedule, xi=None, rng: RngStream | None = None):
    """One reverse DDPM step z_t -> z_{t-1}; noise from ``xi`` or drawn from ``rng``."""
    schedule.check_t(t)
    z_t = np.asarray(z_t)
    b, a, ab = schedule.betas[t], schedule.alphas[t], schedule.alpha_bars[t]
    mean = (z_t - (b / np.sqrt(1.0 - ab)) * np.asarray(eps_hat)) / np.sqrt(a)
    sigma = posterior_std(schedule, t)
    if sigma == 0.0:
        return mean
    if xi is None:
        if rng is None:
            raise ValueError("need xi or rng for t > 1")
        xi = rng.generator().standard_normal(z_t.shape)
    return mean + sigma * np.asarray(xi)


EpsFn = Callable[[np.ndarray, int], np.ndarray]


def run_chain(z, t_from, t_to, eps_fn: EpsFn, schedule: NoiseSchedule, rng: RngStream):
    """Ancestral steps t_from, ..., t_to + 1, returning z_{t_to}."""
    for t in range(t_from, t_to, -1):
        z = ancestral_step(z, t, eps_fn(z, t), schedule, rng=rng)
    return z


def full_chain_sample(shape, eps_fn: EpsFn, schedule: NoiseSchedule, rng: RngStream):
    """Plain DDPM sampling from N(0, I) at T down to z_0."""
    chain = rng.child("chain")
    z = chain.generator().standard_normal(shape)
    return run_chain(z, schedule.T, 0, eps_fn, schedule, chain)


@dataclass(frozen=True)
class SkipPlan:
    t1: int
    t2: int

    def validate(self, T):
        if not 0 <= self.t1 <= self.t2 <= T:
            raise PlanError(f"need 0 <= T1 <= T2 <= {T}, got ({self.t1}, {self.t2})")

    @property
    def interval(self):
        return self.t2 - self.t1

    def coefficients(self, schedule: NoiseSchedule):
        """(u, a) with u = sqrt(1-abar1)/sqrt(1-abar2) and a = sqrt(abar1) - sqrt(abar2) u."""
        self.validate(schedule.T)
        if self.t1 == self.t2:
            return 1.0, 0.0
        ab1, ab2 = schedule.alpha_bars[self.t1], schedule.alpha_bars[self.t2]
        u = np.sqrt(1.0 - ab1) / np.sqrt(1.0 - ab2)
        return float(u), float(np.sqrt(ab1) - np.sqrt(ab2) * u)


PriorFn = Callable[[], tuple]


def skip_sample(plan: SkipPlan, prior_fn: PriorFn, eps_fn: EpsFn, schedule: NoiseSchedule,
                rng: RngStream, blend_clean=False):
    """Conditional skip sampler.

    ``prior_fn()`` returns the conditional prior (mu, logvar), already batched.
    The chain from pure noise runs T -> T2; its state is blended with the noised
    prior draw at T1 and the chain resumes T1 -> 0. ``blend_clean`` blends the
    un-noised prior draw instead (the variant whose marginal is exact).
    The chain stream matches ``full_chain_sample`` so T1 == T2 reproduces it bitwise.
    """
    plan.validate(schedule.T)
    mu, logvar = (np.asarray(v, dtype=np.float64) for v in prior_fn())
    chain = rng.child("chain")
    prior = rng.child("prior")
    x_t2 = chain.generator().standard_normal(mu.shape)
    x_t2 = run_chain(x_t2, schedule.T, plan.t2, eps_fn, schedule, chain)
    if plan.t1 == plan.t2:
        x_hat = x_t2
    else:
        g = prior.generator()
        x0_star = mu + np.exp(0.5 * logvar) * g.standard_normal(mu.shape)
        eps1 = g.standard_normal(mu.shape)
        ab1 = schedule.alpha_bars[plan.t1]
        x_t1_star = np.sqrt(ab1) * x0_star + np.sqrt(1.0 - ab1) * eps1
        u, a = plan.coefficients(schedule)
        x_hat = a * (x0_star if blend_clean else x_t1_star) + u * x_t2
    return run_chain(x_hat, plan.t1, 0, eps_fn, schedule, chain)


class Denoiser(Module):
    """Residual conv net eps(z_t, c0, t): c0 enters as projected channels, t as an embedding bias."""

    def __init__(self, latent_shape=(1, 8, 8), cond_dim=50, width=64, n_blocks=4,
                 cond_channels=8, emb_dim=64, rng: RngStream | None = None, dtype=np.float32):
        rng = rng or RngStream(0)
        self.latent_shape = tuple(latent_shape)
        self.emb_dim = emb_dim
        c = self.latent_shape[0]
        self.cond_proj = Linear(cond_dim, cond_channels, rng, dtype=dtype)
        self.t_mlp = MLP([emb_dim, emb_dim, emb_dim], rng, dtype=dtype)
        self.conv_in = Conv2d(c + cond_channels, width, 3, rng, dtype=dtype)
        self.blocks = [ResBlock(width, rng, emb_dim=emb_dim, dtype=dtype) for _ in range(n_blocks)]
        self.conv_out = Conv2d(width, c, 3, rng, dtype=dtype)

    def __call__(self, z, c0, t):
        z = z if isinstance(z, Tensor) else Tensor(z)
        c0 = c0 if isinstance(c0, Tensor) else Tensor(c0)
        B, _, H, W = z.shape
        t = np.broadcast_to(np.asarray(t), (B,))
        emb = self.t_mlp(Tensor(sinusoidal_embedding(t, self.emb_dim, dtype=z.dtype)))
        proj = self.cond_proj(F.reshape(c0, (B, -1)))
        cmap = F.broadcast_to(F.reshape(proj, (B, proj.shape[1], 1, 1)), (B, proj.shape[1], H, W))
        h = self.conv_in(F.concat([z, cmap], axis=1))
        for block in self.blocks:
            h = block(h, emb)
        return self.conv_out(F.silu(h))

    def eps_fn(self, c0) -> EpsFn:
        """Numpy closure for the samplers with c0 fixed."""
        c0 = Tensor(np.asarray(c0, dtype=np.float32))

        def fn(z, t):
            return self(Tensor(np.asarray(z, dtype=np.float32)), c0, t).data.astype(np.float64)
        return fn


def ddm_loss(model: Denoiser, z0, c0, schedule: NoiseSchedule, rng: RngStream, t=None):
    """L1 between drawn noise and the prediction at uniformly drawn t."""
    z0 = np.asarray(z0, dtype=np.float32)
    B = z0.shape[0]
    g = rng.generator()
    if t is None:
        t = g.integers(1, schedule.T + 1, size=B)
    t = np.broadcast_to(np.asarray(t), (B,))
    eps = g.standard_normal(z0.shape).astype(np.float32)
    z_t = q_sample(z0, t, eps, schedule).astype(np.float32)
    pred = model(Tensor(z_t), c0, t)
    loss = F.mean(F.absolute(pred - Tensor(eps)))
    if not np.isfinite(loss.data):
        raise FloatingPointError("non-finite diffusion loss")
    return loss


def gaussian_optimal_eps(mean, cov, schedule: NoiseSchedule) -> EpsFn:
    """Exact E[eps | z_t] when data ~ N(mean, cov)."""
    mean = np.asarray(mean, dtype=np.float64)
    cov = np.asarray(cov, dtype=np.float64)
    eye = np.eye(len(mean))

    def fn(z, t):
        ab = schedule.alpha_bars[t]
        s = np.sqrt(1.0 - ab)
        marg = ab * cov + (1.0 - ab) * eye
        # E[eps|z] = s * marg^{-1} (z - sqrt(ab) mean)
        return s * np.linalg.solve(marg, (z - np.sqrt(ab) * mean).T).T
    return fn


@dataclass
class TuneRow:
    t1: int
    t2: int
    median_rwp: float
    feasible: bool


def tune_skip(evaluate: Callable[[SkipPlan], Sequence[float]], grid: Sequence[tuple], T: int,
              slack=0.1, report_path=None):
    """Pick the widest-interval plan whose median R_wp is within (1 + slack) of the full chain.

    ``evaluate(plan)`` returns per-structure R_wp values. The full-chain plan
    (T, T) is always evaluated and is feasible by construction.
    """
    if not grid:
        raise PlanError("empty candidate grid")
    plans = [SkipPlan(T, T)]
    for t1, t2 in grid:
        p = SkipPlan(int(t1), int(t2))
        p.validate(T)
        if p not in plans:
            plans.append(p)
    medians = {p: float(np.median(np.asarray(evaluate(p), dtype=np.float64))) for p in plans}
    limit = (1.0 + slack) * medians[plans[0]]
    rows = [TuneRow(p.t1, p.t2, medians[p], bool(p == plans[0] or medians[p] <= limit)) for p in plans]
    feasible = [(r.t2 - r.t1, -r.median_rwp, -r.t2, SkipPlan(r.t1, r.t2)) for r in rows if r.feasible]
    best = max(feasible, key=lambda x: x[:3])[3]
    if report_path is not None:
        write_tune_report(report_path, rows)
    return best, rows


def write_tune_report(path, rows):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, delimiter="\t", lineterminator="\n")
        w.writerow(["T1", "T2", "median_rwp", "feasible"])
        for r in rows:
            w.writerow([r.t1, r.t2, f"{r.median_rwp:.6g}", int(r.feasible)])
