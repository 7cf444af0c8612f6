"""Dataset directories: structures + manifest from structgen, PDFs alongside."""
from __future__ import annotations

import os
from dataclasses import dataclass

import numpy as np

from ..condvae import reshape_condition
from ..graphrep import block_split, laplacian_encode
from ..nn import RngStream
from ..pdfsim import normalize, pdf_from_structure
from ..structgen import AtomCloud
from .io import read_manifest, read_pdf, read_xyz, resolve, write_pdf
from .profiles import Profile


def pdf_path(data_dir, record):
    stem = os.path.splitext(os.path.basename(record["path"]))[0]
    return os.path.join(data_dir, "pdf", stem + ".gr")


def generate_pdfs(data_dir, profile: Profile, seed=42):
    """Simulate one PDF per manifest entry, Q_damp drawn uniformly in [0, q_damp_max]."""
    records = read_manifest(os.path.join(data_dir, "manifest.tsv"))
    os.makedirs(os.path.join(data_dir, "pdf"), exist_ok=True)
    root = RngStream(seed).child("qdamp")
    r = profile.debye().r_grid()
    for i, rec in enumerate(records):
        cloud = read_xyz(resolve(data_dir, rec["path"]))
        q_damp = float(root.child(i).generator().uniform(0.0, profile.q_damp_max))
        g = normalize(pdf_from_structure(cloud, profile.debye(q_damp)).g)
        header = {"kind": rec["kind"], "natoms": cloud.n_atoms, "q_damp": f"{q_damp:.6f}",
                  "structure": rec["path"], "profile": profile.name}
        write_pdf(pdf_path(data_dir, rec), r, g, header)
    return len(records)


@dataclass
class TrainingSet:
    names: list
    kinds: list
    clouds: list
    pdfs: np.ndarray     # (N, n_points) normalised G(r)
    q_damps: np.ndarray
    conds: np.ndarray    # (N, *cond_shape) float32
    blocks: np.ndarray   # (N, *block_shape) float32

    def __len__(self):
        return len(self.names)

    def subset(self, idx):
        idx = list(idx)
        return TrainingSet([self.names[i] for i in idx], [self.kinds[i] for i in idx],
                           [self.clouds[i] for i in idx], self.pdfs[idx], self.q_damps[idx],
                           self.conds[idx], self.blocks[idx])


def build_training_set(clouds, pdfs, q_damps, profile: Profile, names=None) -> TrainingSet:
    pdfs = np.stack([normalize(g) for g in pdfs])
    conds = reshape_condition(pdfs, profile.cond_shape).astype(np.float32)
    blocks = np.stack([block_split(laplacian_encode(c.coords, profile.sigma, profile.n_max,
                                                    profile.norm).matrix) for c in clouds]).astype(np.float32)
    names = names or [f"{i:05d}_{c.kind}" for i, c in enumerate(clouds)]
    return TrainingSet(list(names), [c.kind for c in clouds], list(clouds), pdfs,
                       np.asarray(q_damps, dtype=float), conds, blocks)


def simulate_training_set(clouds, profile: Profile, seed=42) -> TrainingSet:
    """In-memory counterpart of generate_pdfs + load_training_set."""
    root = RngStream(seed).child("qdamp")
    q_damps = [float(root.child(i).generator().uniform(0.0, profile.q_damp_max)) for i in range(len(clouds))]
    pdfs = [pdf_from_structure(c, profile.debye(q)).g for c, q in zip(clouds, q_damps)]
    return build_training_set(clouds, pdfs, q_damps, profile)


def load_training_set(data_dir, profile: Profile, split="train") -> TrainingSet:
    records = read_manifest(os.path.join(data_dir, "manifest.tsv"))
    if split is not None:
        records = [r for r in records if r["split"] == split]
    if not records:
        raise ValueError(f"{data_dir}: no records with split={split!r}")
    r_grid = profile.debye().r_grid()
    clouds, pdfs, q_damps, names = [], [], [], []
    for rec in records:
        path = pdf_path(data_dir, rec)
        if not os.path.exists(path):
            raise FileNotFoundError(f"{path}: run `gen pdf` first")
        _, g, header = read_pdf(path, r_grid)
        cloud: AtomCloud = read_xyz(resolve(data_dir, rec["path"]))
        clouds.append(cloud)
        pdfs.append(g)
        q_damps.append(float(header.get("q_damp", "nan")))
        names.append(os.path.splitext(os.path.basename(rec["path"]))[0])
    return build_training_set(clouds, pdfs, q_damps, profile, names)
