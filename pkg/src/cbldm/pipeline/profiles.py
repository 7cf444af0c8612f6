"""Named configuration profiles (full-size, desk, or custom from an INI file)."""
from __future__ import annotations

import configparser
import dataclasses
import hashlib
import json
from dataclasses import dataclass, field, fields, replace

from ..pdfsim import DebyeParams


class ProfileError(ValueError):
    pass


@dataclass(frozen=True)
class Profile:
    name: str = "desk"
    # representation
    n_max: int = 64
    sigma: float = 5.0
    norm_constant: float = 0.0  # 0 means n_max
    # PDF grid
    r_min: float = 0.0
    r_max: float = 30.0
    r_step: float = 0.05
    q_min: float = 0.7
    q_max: float = 25.0
    q_step: float = 0.005
    b_iso: float = 0.3
    q_damp_max: float = 0.1
    q_damp_fit_step: float = 0.01
    # shapes
    cond_shape: tuple = (6, 100)
    cond_latent: tuple = (2, 25)
    latent_shape: tuple = (1, 8, 8)
    # networks
    cvae_widths: tuple = (16, 32, 32)
    cvae_dense_readout: bool = True
    xvae_enc_widths: tuple = (32, 64)
    xvae_dec_widths: tuple = (32, 16)
    xvae_cond_channels: int = 4
    xvae_dense_readout: bool = True
    xvae_latent_gain: float = 1.0
    xvae_init_logvar: float = -8.0
    xvae_data_scale: float = 0.0135  # block RMS of desk training data
    prior_hidden: int = 256
    ddm_width: int = 64
    ddm_blocks: int = 4
    ddm_emb_dim: int = 64
    ddm_cond_channels: int = 8
    # diffusion
    T: int = 100
    beta_start: float = 1e-4
    beta_end: float = 0.2
    # training budgets
    cvae_steps: int = 1500
    cvae_batch: int = 16
    cvae_lr: float = 2e-3
    cvae_beta_kl: float = 1e-5
    cvae_converged_rec: float = 2e-3
    xvae_steps: int = 1200
    xvae_batch: int = 16
    xvae_lr: float = 1e-3
    xvae_beta_kl: float = 5e-9
    xvae_converged_rec: float = 1e-3  # relative to data_scale**2
    xvae_refit_copies: int = 8
    xvae_refit_ridge: float = 1e-2
    prior_refit: bool = True
    prior_refit_ridge: float = 1e-6
    ddm_steps: int = 2000
    ddm_batch: int = 32
    ddm_lr: float = 1e-3
    optimizer: str = "adamw"
    weight_decay: float = 0.0
    # sampling and tuning
    k: int = 8
    slack: float = 0.1
    tune_k: int = 2
    skip_grid: str = "0:100,0:50,25:75,50:100,75:100,90:100"

    def __post_init__(self):
        c, length = self.cond_shape
        if c * length != self.n_points:
            raise ProfileError(f"{self.name}: condition {self.cond_shape} needs {c * length} samples, "
                               f"grid has {self.n_points}")
        if self.n_max % 2:
            raise ProfileError(f"{self.name}: n_max must be even")
        half = self.n_max // 2
        if half % self.latent_shape[1] or half % self.latent_shape[2]:
            raise ProfileError(f"{self.name}: latent {self.latent_shape} does not divide block size {half}")
        if self.cond_shape[1] % self.cond_latent[1]:
            raise ProfileError(f"{self.name}: condition latent length must divide {self.cond_shape[1]}")

    @property
    def n_points(self):
        return int(round((self.r_max - self.r_min) / self.r_step))

    @property
    def block_shape(self):
        return (4, self.n_max // 2, self.n_max // 2)

    @property
    def norm(self):
        return float(self.norm_constant or self.n_max)

    @property
    def cond_dim(self):
        return self.cond_latent[0] * self.cond_latent[1]

    def debye(self, q_damp=0.0) -> DebyeParams:
        return DebyeParams(r_min=self.r_min, r_max=self.r_max, r_step=self.r_step, q_min=self.q_min,
                           q_max=self.q_max, q_damp=q_damp, b_iso=self.b_iso, q_step=self.q_step)

    def grid(self):
        """Candidate skip plans parsed from ``skip_grid`` ("T1:T2,...")."""
        out = []
        for item in self.skip_grid.split(","):
            if item.strip():
                a, b = item.split(":")
                out.append((int(a), int(b)))
        return out

    def with_(self, **kw):
        return replace(self, **kw)

    def hash(self) -> int:
        """u64 over every field that shapes a checkpoint; training budgets are excluded."""
        keep = {f.name: getattr(self, f.name) for f in fields(self) if f.name in _SHAPE_FIELDS}
        digest = hashlib.sha256(json.dumps(keep, sort_keys=True).encode()).digest()
        return int.from_bytes(digest[:8], "little")


_SHAPE_FIELDS = {
    "n_max", "sigma", "norm_constant", "r_min", "r_max", "r_step", "q_min", "q_max", "q_step", "b_iso",
    "cond_shape", "cond_latent", "latent_shape", "cvae_widths", "cvae_dense_readout", "xvae_enc_widths",
    "xvae_dec_widths", "xvae_cond_channels", "xvae_dense_readout", "xvae_latent_gain", "xvae_data_scale",
    "prior_hidden",
    "ddm_width", "ddm_blocks", "ddm_emb_dim", "ddm_cond_channels", "T", "beta_start", "beta_end",
}

DESK = Profile()

FULL = Profile(
    name="full", n_max=256, r_step=0.01, cond_shape=(6, 500), cond_latent=(2, 125), latent_shape=(1, 16, 16),
    xvae_enc_widths=(64, 128), xvae_dec_widths=(128, 64), prior_hidden=512, ddm_width=128, ddm_blocks=6,
    ddm_emb_dim=128, T=1000, beta_start=1e-4, beta_end=0.02, cvae_steps=100_000, xvae_steps=100_000,
    ddm_steps=200_000, cvae_batch=64, xvae_batch=32, ddm_batch=64,
    skip_grid="0:1000,0:500,250:750,500:1000,750:1000,900:1000",
)

BUILTIN = {"desk": DESK, "full": FULL}


def _coerce(template, text):
    text = text.strip()
    if isinstance(template, bool):
        if text.lower() in ("1", "true", "yes", "on"):
            return True
        if text.lower() in ("0", "false", "no", "off"):
            return False
        raise ProfileError(f"not a boolean: {text!r}")
    if isinstance(template, tuple):
        return tuple(int(x) for x in text.replace(",", " ").split())
    return type(template)(text)


def load_profile(name="desk", config=None) -> Profile:
    """Built-in profile, or ``[profile.<name>]`` from an INI file (``base = desk`` by default)."""
    if config is None:
        if name not in BUILTIN:
            raise ProfileError(f"unknown profile {name!r}; built-ins are {sorted(BUILTIN)}")
        return BUILTIN[name]
    cp = configparser.ConfigParser()
    cp.optionxform = str  # keys are case-sensitive (T)
    if not cp.read(config):
        raise FileNotFoundError(config)
    section = f"profile.{name}"
    if section not in cp:
        if name in BUILTIN:
            return BUILTIN[name]
        raise ProfileError(f"no [{section}] section in {config}")
    sec = dict(cp[section])
    base = load_profile(sec.pop("base", "desk").strip(), None)
    known = {f.name: f for f in fields(Profile)}
    kw = {"name": name}
    for key, val in sec.items():
        if key not in known or key == "name":
            raise ProfileError(f"unknown profile key {key!r} in [{section}]")
        kw[key] = _coerce(getattr(base, key), val)
    return base.with_(**kw)


def describe(profile: Profile) -> str:
    return json.dumps(dataclasses.asdict(profile), indent=1)
