"""Adaptive quantile trigger over a rolling ring of interval widths.

The current width is pushed into the ring *before* the threshold is
computed (inclusive convention), and the attack fires on width >= T.
A warm-up of `warmup` steps (default: the ring capacity) never fires,
because the quantile of a near-empty ring is noise.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigurationError, UsageError
from .quantiles import nominal_rank_quantile


class ThresholdState:
    """Ring of the last M widths plus the current adaptive threshold."""

    def __init__(self, capacity: int, attack_rate: float, warmup: int | None = None):
        if capacity < 1:
            raise ConfigurationError(f"ring capacity must be >= 1, got {capacity}")
        if not 0.0 < attack_rate < 1.0:
            raise ConfigurationError(f"attack_rate must be in (0,1), got {attack_rate}")
        self.capacity = int(capacity)
        self.attack_rate = float(attack_rate)
        self.warmup = self.capacity if warmup is None else int(warmup)
        if self.warmup < 0:
            raise ConfigurationError(f"warmup must be >= 0, got {warmup}")
        self._ring = np.empty(self.capacity)
        self._count = 0          # filled slots, <= capacity
        self._pos = 0            # next write position
        self.steps_seen = 0
        self.current_threshold = None

    def __len__(self):
        return self._count

    def history(self) -> np.ndarray:
        """Ring contents in insertion order (oldest first)."""
        if self._count < self.capacity:
            return self._ring[: self._count].copy()
        return np.concatenate((self._ring[self._pos :], self._ring[: self._pos]))


def update_threshold(state: ThresholdState, width: float) -> float:
    """Push the width (evicting the oldest if full) and recompute
    T = nominal-rank (1 - attack_rate)-quantile of the ring."""
    if not width >= 0.0:
        raise UsageError(f"interval width must be >= 0, got {width}")
    state._ring[state._pos] = width
    state._pos = (state._pos + 1) % state.capacity
    state._count = min(state._count + 1, state.capacity)
    state.steps_seen += 1
    t = nominal_rank_quantile(state._ring[: state._count], 1.0 - state.attack_rate)
    state.current_threshold = t
    return t


def should_attack(state: ThresholdState, width: float) -> bool:
    """True iff past warm-up and width >= T (the width already pushed)."""
    if state.current_threshold is None:
        raise UsageError("should_attack() before any update_threshold()")
    # At decision time the current width is already pushed, so the k-th
    # streamed step sees steps_seen == k; the first `warmup` steps never fire.
    if state.steps_seen <= state.warmup:
        return False
    return bool(width >= state.current_threshold)
