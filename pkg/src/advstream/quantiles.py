"""Nominal-rank empirical quantile.

One quantile definition is shared by the conformal calibrator and the
attack trigger so a single brute-force oracle covers both: the k-th
smallest value with k = ceil(level * n), k clamped into [1, n].  Levels
above 1 (the finite-sample-adjusted conformal level on small calibration
sets) therefore resolve to the conservative maximum.
"""

from __future__ import annotations

import math

import numpy as np

from .errors import EmptyDataError

# Guard against float artifacts such as 0.9 * 20 -> 18.000000000000004,
# which would push ceil() one rank too high at exact-integer products.
_RANK_EPS = 1e-9


def nominal_rank(level: float, n: int) -> int:
    """Return the 1-based rank k = ceil(level * n), clamped into [1, n]."""
    if n < 1:
        raise EmptyDataError("quantile of an empty sample")
    k = math.ceil(level * n - _RANK_EPS)
    return min(max(k, 1), n)


def nominal_rank_quantile(values, level: float) -> float:
    """k-th smallest of `values` at the nominal rank for `level`.

    No interpolation: the quantile is always an element of `values`.
    """
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 1:
        arr = arr.ravel()
    k = nominal_rank(level, arr.size)
    # partition is O(n); rank k means index k-1 after an ascending sort
    return float(np.partition(arr, k - 1)[k - 1])
