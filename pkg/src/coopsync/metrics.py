"""Error summaries."""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np


def rmse(errors: Sequence[float]) -> float:
    """Root mean square of ``errors``.  Empty input is an error."""
    e = np.asarray(errors, dtype=float).ravel()
    if e.size == 0:
        raise ValueError("rmse of an empty sequence")
    return math.sqrt(float(np.mean(e * e)))


def empirical_cdf(errors: Sequence[float]) -> list[tuple[float, float]]:
    """Sorted distinct values with the fraction of samples <= each value."""
    e = np.sort(np.asarray(errors, dtype=float).ravel())
    n = e.size
    if n == 0:
        raise ValueError("empirical CDF of an empty sequence")
    values, counts = np.unique(e, return_counts=True)
    cum = np.cumsum(counts)
    return [(float(v), int(k) / n) for v, k in zip(values, cum)]
