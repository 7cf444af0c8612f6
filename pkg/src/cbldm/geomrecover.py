"""Coordinates from a Laplacian target: spectral start, then Laplacian-MSE refinement."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize, minimize_scalar

from .graphrep import LaplacianImage, gaussian_weights


class InvalidLaplacianError(ValueError):
    pass


class DegenerateEmbeddingError(ValueError):
    pass


@dataclass
class SpectralInit:
    coords: np.ndarray
    eigenvalues: np.ndarray
    eigenvectors: np.ndarray  # generalized eigenvectors y (D-orthonormal), before scaling


@dataclass
class RefineResult:
    coords: np.ndarray
    final_mse: float
    iterations: int
    converged: bool
    initial_mse: float = float("nan")


def _as_matrix(target):
    if isinstance(target, LaplacianImage):
        return target.raw(), target.sigma
    return np.asarray(target, dtype=np.float64), None


def spectral_embed(target, dim=3, rel_tol=1e-8, strict=False) -> SpectralInit:
    """Solve L y = lambda D y with D = diag(L) and keep the smallest positive modes.

    Each kept eigenvector is scaled by 1/sqrt(lambda). For fewer than ``dim``
    usable modes (tiny clusters) the missing columns are zero unless ``strict``.
    """
    L, _ = _as_matrix(target)
    d = np.diag(L)
    if np.any(d <= 0):
        raise InvalidLaplacianError("degree diagonal must be strictly positive")
    s = 1.0 / np.sqrt(d)
    A = s[:, None] * L * s[None, :]
    A = 0.5 * (A + A.T)
    lam, V = np.linalg.eigh(A)
    keep = np.where(lam > rel_tol * lam[-1])[0][:dim]
    if len(keep) < dim and strict:
        raise DegenerateEmbeddingError(f"only {len(keep)} positive eigenvalues above tolerance")
    n = len(d)
    Y = s[:, None] * V[:, keep]
    coords = np.zeros((n, dim))
    coords[:, :len(keep)] = Y / np.sqrt(lam[keep])[None, :]
    return SpectralInit(coords, lam[keep], Y)


def laplacian_mse(coords, target, sigma):
    n = len(target)
    diff = (np.diag((w := gaussian_weights(coords, sigma)).sum(axis=1)) - w) - target
    return float(np.sum(diff * diff) / n ** 2)


def laplacian_mse_and_grad(coords, target, sigma):
    """f(Z) = mean((L(Z) - target)^2) and its analytic gradient."""
    n = len(target)
    w = gaussian_weights(coords, sigma)
    R = np.diag(w.sum(axis=1)) - w - target
    f = float(np.sum(R * R) / n ** 2)
    rd = np.diag(R)
    # df/dW_ij for the unordered pair (i, j): W_ij enters L_ij, L_ji, L_ii, L_jj
    dfdw = (2.0 / n ** 2) * (rd[:, None] + rd[None, :] - R - R.T)
    G = dfdw * w
    # dW_ij/dz_i = W_ij (z_j - z_i) / sigma^2
    grad = (G @ coords - G.sum(axis=1)[:, None] * coords) / sigma ** 2
    return f, grad


def fit_scale(coords, target, sigma, bounds=(1e-3, 1e3)):
    """Isotropic rescaling of ``coords`` that best matches ``target``."""
    if not np.any(coords):
        return coords
    rms = np.sqrt(np.mean(np.sum((coords - coords.mean(0)) ** 2, axis=1)))
    base = coords / rms
    res = minimize_scalar(lambda ls: laplacian_mse(np.exp(ls) * base, target, sigma),
                          bounds=np.log(bounds), method="bounded", options={"xatol": 1e-6})
    return np.exp(res.x) * base


def refine_coords(target, init, sigma=None, max_iter=2000, gtol=1e-8, ftol=1e-12) -> RefineResult:
    """Locally minimise the Laplacian MSE starting from ``init``.

    Quasi-Newton (L-BFGS) with a line search on the true objective, so the
    returned point never has a larger objective than ``init``.
    """
    L, img_sigma = _as_matrix(target)
    sigma = img_sigma if sigma is None else sigma
    if sigma is None:
        raise ValueError("sigma is required when target is a bare matrix")
    if not np.allclose(L, L.T, atol=1e-9):
        raise InvalidLaplacianError("target must be symmetric")
    z0 = np.array(init, dtype=np.float64)
    if not np.all(np.isfinite(z0)):
        raise ValueError("initial coordinates must be finite")
    shape = z0.shape
    f0, g0 = laplacian_mse_and_grad(z0, L, sigma)
    if f0 < ftol or np.max(np.abs(g0)) < gtol:
        return RefineResult(z0, f0, 0, True, f0)

    best = {"x": z0.ravel().copy(), "f": f0}

    class _Done(Exception):
        pass

    def fun(x):
        f, g = laplacian_mse_and_grad(x.reshape(shape), L, sigma)
        if not np.isfinite(f):
            raise FloatingPointError(f"non-finite objective; last good objective {best['f']:.3e}")
        if f < best["f"]:
            best["x"], best["f"] = x.copy(), f
        return f, g.ravel()

    def stop(intermediate_result):
        if intermediate_result.fun < ftol:
            raise StopIteration

    res = minimize(fun, z0.ravel(), jac=True, method="L-BFGS-B", callback=stop,
                   options={"maxiter": max_iter, "gtol": gtol, "ftol": 0.0, "maxcor": 30})
    x, f = (res.x, float(res.fun)) if res.fun <= best["f"] else (best["x"], best["f"])
    _, g = laplacian_mse_and_grad(x.reshape(shape), L, sigma)
    converged = f < ftol or np.max(np.abs(g)) < gtol
    return RefineResult(x.reshape(shape), f, int(res.nit), bool(converged), f0)


def recover_coords(target, sigma=None, max_iter=2000) -> RefineResult:
    """Spectral start, isotropic rescale, then refinement."""
    L, img_sigma = _as_matrix(target)
    sigma = img_sigma if sigma is None else sigma
    init = spectral_embed(L).coords
    init = fit_scale(init, L, sigma)
    return refine_coords(L, init, sigma=sigma, max_iter=max_iter)


def align_rmsd(a, b):
    """RMSD after centring and the optimal orthogonal transform (reflections allowed)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"shape mismatch {a.shape} vs {b.shape}")
    if len(a) == 0:
        raise ValueError("empty coordinate sets")
    a = a - a.mean(axis=0)
    b = b - b.mean(axis=0)
    u, _, vt = np.linalg.svd(a.T @ b)
    diff = a @ (u @ vt) - b
    return float(np.sqrt(np.sum(diff * diff) / len(a)))
