"""Gaussian-kernel graph Laplacians of clusters, padded to a fixed size."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


class CapacityError(ValueError):
    pass


class DegenerateOutputError(ValueError):
    pass


@dataclass
class LaplacianImage:
    matrix: np.ndarray  # (n_max, n_max), already divided by norm_constant
    n_atoms: int
    sigma: float
    norm_constant: float

    @property
    def n_max(self):
        return self.matrix.shape[0]

    def raw(self):
        """Un-normalised top-left n x n block."""
        n = self.n_atoms
        return self.matrix[:n, :n] * self.norm_constant


def gaussian_weights(coords, sigma):
    """W_ij = exp(-|v_i - v_j|^2 / (2 sigma^2)) with the diagonal set to zero."""
    coords = np.asarray(coords, dtype=np.float64)
    diff = coords[:, None, :] - coords[None, :, :]
    w = np.exp(-np.einsum("ijk,ijk->ij", diff, diff) / (2.0 * sigma ** 2))
    np.fill_diagonal(w, 0.0)
    return w


def laplacian(coords, sigma):
    """Unpadded L = D - W."""
    w = gaussian_weights(coords, sigma)
    return np.diag(w.sum(axis=1)) - w


def laplacian_encode(coords, sigma=5.0, n_max=256, norm_constant=None) -> LaplacianImage:
    coords = np.asarray(coords, dtype=np.float64)
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    n = len(coords)
    if n > n_max:
        raise CapacityError(f"{n} atoms exceed capacity {n_max}")
    norm = float(n_max if norm_constant is None else norm_constant)
    mat = np.zeros((n_max, n_max))
    mat[:n, :n] = laplacian(coords, sigma) / norm
    return LaplacianImage(mat, n, float(sigma), norm)


def block_split(matrix):
    """(N, N) -> (4, N/2, N/2): top-left, top-right, bottom-left, bottom-right."""
    matrix = np.asarray(matrix)
    if matrix.ndim != 2 or matrix.shape[0] != matrix.shape[1] or matrix.shape[0] % 2:
        raise ValueError(f"block_split needs a square matrix of even size, got {matrix.shape}")
    h = matrix.shape[0] // 2
    return np.stack([matrix[:h, :h], matrix[:h, h:], matrix[h:, :h], matrix[h:, h:]])


def block_merge(blocks):
    blocks = np.asarray(blocks)
    if blocks.ndim != 3 or blocks.shape[0] != 4 or blocks.shape[1] != blocks.shape[2]:
        raise ValueError(f"block_merge needs shape (4, h, h), got {blocks.shape}")
    return np.block([[blocks[0], blocks[1]], [blocks[2], blocks[3]]])


def infer_atom_count(diag, floor=0.05, ratio=0.5):
    """Rows whose diagonal exceeds ``ratio`` x the median of diagonals above ``floor``.

    ``diag`` is in raw (un-normalised) units. The floor keeps near-zero padding
    rows out of the median.
    """
    diag = np.asarray(diag)
    pos = diag[diag > floor]
    if pos.size == 0:
        return 0
    return int(np.sum(diag > ratio * np.median(pos)))


def project_rows(mat):
    """Clamp off-diagonals to <= 0 and reset the diagonal so rows sum to zero."""
    mat = np.array(mat, dtype=np.float64)
    off = mat - np.diag(np.diag(mat))
    off = np.minimum(off, 0.0)
    return off - np.diag(off.sum(axis=1))


def symmetrize(raw, sigma=5.0, norm_constant=1.0, floor=0.05, ratio=0.5) -> LaplacianImage:
    """Turn a (possibly noisy, normalised) model output into a valid Laplacian image."""
    raw = np.asarray(raw, dtype=np.float64)
    if raw.ndim != 2 or raw.shape[0] != raw.shape[1]:
        raise ValueError(f"expected a square matrix, got {raw.shape}")
    if not np.all(np.isfinite(raw)):
        raise ValueError("matrix has non-finite entries")
    m = 0.5 * (raw + raw.T)
    n = infer_atom_count(np.diag(m) * norm_constant, floor, ratio)
    if n < 2:
        raise DegenerateOutputError(f"inferred atom count {n} < 2")
    out = np.zeros_like(m)
    out[:n, :n] = project_rows(m[:n, :n])
    return LaplacianImage(out, n, float(sigma), float(norm_constant))
