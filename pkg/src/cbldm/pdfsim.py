"""Debye-equation PDF simulation for finite clusters."""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from .structgen import AtomCloud


class UnsupportedParameterError(ValueError):
    pass


@dataclass(frozen=True)
class DebyeParams:
    r_min: float = 0.0
    r_max: float = 30.0
    r_step: float = 0.01
    q_min: float = 0.7
    q_max: float = 25.0
    q_damp: float = 0.0
    b_iso: float = 0.3
    delta2: float = 0.0
    q_step: float = 0.005

    def __post_init__(self):
        if not self.r_min < self.r_max:
            raise ValueError("r_min must be < r_max")
        if self.r_step <= 0 or self.q_step <= 0:
            raise ValueError("grid steps must be positive")
        if not self.q_min < self.q_max:
            raise ValueError("q_min must be < q_max")
        if self.q_damp < 0 or self.b_iso < 0:
            raise ValueError("q_damp and b_iso must be non-negative")
        if self.delta2 != 0:
            raise UnsupportedParameterError("delta2 peak sharpening is not supported")

    @property
    def n_points(self):
        return int(round((self.r_max - self.r_min) / self.r_step))

    def r_grid(self):
        return self.r_min + self.r_step * np.arange(self.n_points)

    def q_grid(self):
        """Simpson-ready Q grid: even number of intervals, spacing <= q_step."""
        n_int = int(np.ceil((self.q_max - self.q_min) / self.q_step - 1e-9))
        n_int += n_int % 2
        return np.linspace(self.q_min, self.q_max, n_int + 1)

    def with_(self, **kw):
        return replace(self, **kw)


@dataclass
class PdfCurve:
    g: np.ndarray
    params: DebyeParams

    @property
    def r(self):
        return self.params.r_grid()


def _pair_distances(coords):
    coords = np.asarray(coords, dtype=np.float64)
    i, j = np.triu_indices(len(coords), k=1)
    d = np.linalg.norm(coords[i] - coords[j], axis=1)
    if np.any(d == 0):
        raise ValueError("duplicate atoms: zero interatomic distance")
    return d


def debye_structure_function(cloud: AtomCloud, params: DebyeParams, q):
    """Reduced structure function F(Q) = Q (S(Q) - 1) with unit scattering factors."""
    q = np.asarray(q, dtype=np.float64)
    if np.any(np.diff(q) <= 0):
        raise ValueError("Q grid must be strictly increasing")
    if q[0] < params.q_min - 1e-12 or q[-1] > params.q_max + 1e-12:
        raise ValueError("Q grid outside [q_min, q_max]")
    n = cloud.n_atoms
    if n == 0:
        raise ValueError("empty cloud")
    d = _pair_distances(cloud.coords)
    s = np.zeros_like(q)
    for start in range(0, len(d), 4096):
        qd = np.outer(d[start:start + 4096], q)
        s += (np.sin(qd) / qd).sum(axis=0)
    dw = np.exp(-params.b_iso * q * q / (8 * np.pi ** 2))
    return q * (2.0 / n) * s * dw


def simpson_weights(x):
    n_int = len(x) - 1
    if n_int % 2:
        raise ValueError("Simpson's rule needs an even number of intervals")
    h = (x[-1] - x[0]) / n_int
    w = np.full(len(x), 2.0)
    w[1::2] = 4.0
    w[0] = w[-1] = 1.0
    return w * h / 3.0


@lru_cache(maxsize=4)
def _sine_kernel(params: DebyeParams):
    q, r = params.q_grid(), params.r_grid()
    return (2.0 / np.pi) * np.sin(np.outer(r, q)) * simpson_weights(q)[None, :]


def damping_envelope(r, q_damp):
    return np.exp(-0.5 * (q_damp * np.asarray(r)) ** 2)


def pdf_from_structure(cloud: AtomCloud, params: DebyeParams) -> PdfCurve:
    """G(r) by Simpson sine transform of F(Q), times the Q_damp envelope."""
    q = params.q_grid()
    r = params.r_grid()
    if cloud.n_atoms < 2:
        return PdfCurve(np.zeros_like(r), params)
    f = debye_structure_function(cloud, params, q)
    g = (_sine_kernel(params.with_(q_damp=0.0)) @ f) * damping_envelope(r, params.q_damp)
    return PdfCurve(g, params)


def normalize(g):
    """Max-abs normalisation; all-zero curves are returned unchanged."""
    g = np.asarray(g, dtype=np.float64)
    m = np.max(np.abs(g)) if g.size else 0.0
    return g / m if m > 0 else g.copy()


def distance_histogram(cloud: AtomCloud, bin_width=0.2, r_max=30.0):
    """Unordered pair counts in bins [k*w, (k+1)*w) over [0, r_max]; returns (edges, counts)."""
    if bin_width <= 0:
        raise ValueError("bin_width must be positive")
    n_bins = int(np.ceil(r_max / bin_width - 1e-9))
    edges = bin_width * np.arange(n_bins + 1)
    counts = np.zeros(n_bins, dtype=np.int64)
    if cloud.n_atoms > 1:
        i, j = np.triu_indices(cloud.n_atoms, k=1)
        d = np.linalg.norm(cloud.coords[i] - cloud.coords[j], axis=1)
        idx = np.floor(d / bin_width + 1e-9).astype(np.int64)
        idx = idx[idx < n_bins]
        np.add.at(counts, idx, 1)
    return edges, counts


def local_maxima(y):
    """Indices of strict interior local maxima, sorted by descending height."""
    y = np.asarray(y)
    idx = np.where((y[1:-1] > y[:-2]) & (y[1:-1] >= y[2:]))[0] + 1
    return idx[np.argsort(-y[idx], kind="stable")]
