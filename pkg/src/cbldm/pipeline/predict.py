"""From an observed PDF to ranked candidate structures."""
from __future__ import annotations

import logging
import os
import time
from dataclasses import dataclass, field

import numpy as np

from ..condvae import encode_condition, reshape_condition
from ..diffusion import SkipPlan, make_schedule, skip_sample
from ..geomrecover import DegenerateEmbeddingError, InvalidLaplacianError, recover_coords
from ..graphrep import DegenerateOutputError, block_merge, symmetrize
from ..latentvae import decode_latent, prior_params
from ..nn import RngStream, Tensor
from ..pdfsim import damping_envelope, normalize, pdf_from_structure
from ..structgen import AtomCloud
from .metrics import rwp
from .profiles import Profile
from .train import load_stage

log = logging.getLogger(__name__)

STAGES = ("cvae", "xvae", "ddm")


class AllCandidatesDroppedError(RuntimeError):
    pass


@dataclass
class Candidate:
    cloud: AtomCloud
    rwp: float
    q_damp: float
    laplacian_mse: float
    index: int  # position in the sampled batch

    @property
    def n_atoms(self):
        return self.cloud.n_atoms


@dataclass
class PredictReport:
    candidates: list = field(default_factory=list)  # sorted ascending by rwp
    dropped: list = field(default_factory=list)     # (index, reason)
    seconds: float = 0.0

    @property
    def best(self):
        return self.candidates[0] if self.candidates else None

    def rows(self):
        return [(c.index, c.n_atoms, c.rwp, c.q_damp, c.laplacian_mse) for c in self.candidates]


def checkpoint_paths(ckpt_dir):
    return {s: os.path.join(ckpt_dir, f"{s}.ckpt") for s in STAGES}


def fit_q_damp(g_undamped, observed, r, q_max, step):
    """Grid search of the damping envelope; returns (rwp, q_damp) of the best fit."""
    n = int(round(q_max / step)) if step > 0 else 0
    best = (np.inf, 0.0)
    for q in np.linspace(0.0, n * step, n + 1) if n else [0.0]:
        score = rwp(observed, g_undamped * damping_envelope(r, q))
        if score < best[0]:
            best = (score, float(q))
    return best


class Predictor:
    """The three trained stages bundled for sampling."""

    def __init__(self, profile: Profile, cvae, xvae, ddm, latent_scale=1.0):
        self.profile = profile
        self.cvae, self.xvae, self.ddm = cvae, xvae, ddm
        self.latent_scale = float(latent_scale)
        self.schedule = make_schedule(profile.T, profile.beta_start, profile.beta_end)

    @classmethod
    def from_checkpoints(cls, ckpt_dir, profile: Profile):
        paths = checkpoint_paths(ckpt_dir)
        for stage, path in paths.items():
            if not os.path.exists(path):
                raise FileNotFoundError(f"missing {stage} checkpoint {path}")
        cvae, _ = load_stage(paths["cvae"], "cvae", profile)
        xvae, _ = load_stage(paths["xvae"], "xvae", profile)
        ddm, meta = load_stage(paths["ddm"], "ddm", profile)
        return cls(profile, cvae, xvae, ddm, meta.get("latent_scale", 1.0))

    def condition(self, g):
        c = reshape_condition(normalize(g), self.profile.cond_shape).astype(np.float32)
        return encode_condition(self.cvae, c)

    def sample_latents(self, c0, k, plan: SkipPlan, rng: RngStream):
        """k latents for one condition, in the xVAE's own units."""
        c0k = np.repeat(np.asarray(c0, np.float32)[None], k, axis=0)
        s = self.latent_scale

        def prior_fn():
            mu, lv = (x.data for x in prior_params(self.xvae, Tensor(c0k)))
            return mu / s, lv - 2.0 * np.log(s)

        z = skip_sample(plan, prior_fn, self.ddm.eps_fn(c0k), self.schedule, rng)
        return (z * s).astype(np.float32)

    def decode(self, z):
        return decode_latent(self.xvae, z)

    def candidate(self, blocks, observed, index=0, q_damp=None):
        """Blocks -> Laplacian -> coordinates -> simulated PDF -> Candidate; raises on degenerate output."""
        p = self.profile
        img = symmetrize(block_merge(blocks), p.sigma, p.norm)
        fit = recover_coords(img)
        cloud = AtomCloud(fit.coords - fit.coords.mean(0), "predicted", 0.0)
        g0 = pdf_from_structure(cloud, p.debye(0.0)).g
        r = p.debye().r_grid()
        if q_damp is None:
            score, q = fit_q_damp(g0, observed, r, p.q_damp_max, p.q_damp_fit_step)
        else:
            q = float(q_damp)
            score = rwp(observed, g0 * damping_envelope(r, q))
        return Candidate(cloud, float(score), q, float(fit.final_mse), index)

    def predict(self, g, k, plan: SkipPlan, seed=0, q_damp=None) -> PredictReport:
        """k candidates sorted by R_wp against ``g``; degenerate ones are dropped and logged."""
        t0 = time.time()
        report = PredictReport()
        if k == 0:
            return report
        observed = normalize(g)
        z = self.sample_latents(self.condition(observed), k, plan, RngStream(seed).child("predict"))
        for i, blocks in enumerate(self.decode(z)):
            try:
                report.candidates.append(self.candidate(blocks, observed, i, q_damp))
            except (DegenerateOutputError, DegenerateEmbeddingError, InvalidLaplacianError,
                    FloatingPointError, ValueError) as exc:
                log.warning("candidate %d dropped: %s", i, exc)
                report.dropped.append((i, str(exc)))
        if not report.candidates:
            raise AllCandidatesDroppedError(f"all {k} candidates dropped; first reason: {report.dropped[0][1]}")
        report.candidates.sort(key=lambda c: (c.rwp, c.index))
        report.seconds = time.time() - t0
        return report


def predict_structures(g, k, plan: SkipPlan, ckpt_dir, profile: Profile, seed=0, q_damp=None):
    """Convenience wrapper: load checkpoints, then ``Predictor.predict``."""
    pred = Predictor.from_checkpoints(ckpt_dir, profile)
    report = pred.predict(g, k, plan, seed, q_damp)
    return [c.cloud for c in report.candidates], report


def best_rwps(predictor: Predictor, pdfs, k, plan: SkipPlan, seed=0, q_damps=None):
    """Best-of-k R_wp per input curve; inf where every candidate was dropped."""
    out = []
    for i, g in enumerate(pdfs):
        q = None if q_damps is None else q_damps[i]
        try:
            out.append(predictor.predict(g, k, plan, seed + i, q).best.rwp)
        except AllCandidatesDroppedError as exc:
            log.warning("structure %d: %s", i, exc)
            out.append(float("inf"))
    return np.asarray(out)


def tune_evaluator(predictor: Predictor, pdfs, k, seed=0, q_damps=None):
    """Closure for ``tune_skip``: per-structure best-of-k R_wp of a plan over ``pdfs``."""
    def evaluate(plan: SkipPlan):
        return best_rwps(predictor, pdfs, k, plan, seed, q_damps)
    return evaluate
