"""Agreement metric between two PDF curves."""
from __future__ import annotations

import numpy as np

from ..pdfsim import normalize


class UndefinedMetricError(ValueError):
    pass


def rwp(observed, calculated, weights=None, normalized=True):
    """sqrt(sum w (obs - calc)^2 / sum w obs^2), after max-abs normalising both curves."""
    obs = np.asarray(observed, dtype=np.float64)
    calc = np.asarray(calculated, dtype=np.float64)
    if obs.shape != calc.shape:
        raise ValueError(f"curves differ in length: {obs.shape} vs {calc.shape}")
    if not np.any(obs):
        raise UndefinedMetricError("R_wp is undefined for an all-zero observed curve")
    if normalized:
        obs, calc = normalize(obs), normalize(calc)
    w = np.ones_like(obs) if weights is None else np.asarray(weights, dtype=np.float64)
    return float(np.sqrt(np.sum(w * (obs - calc) ** 2) / np.sum(w * obs ** 2)))
