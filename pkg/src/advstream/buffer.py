"""Bounded rolling buffer, frozen 0-1 normalization, split, and windowing.

Normalization statistics freeze the first time the buffer fills and never
move afterwards: the streaming phase is judged in the units the model was
trained in.  Values outside the initial range pass through normalize()
unclipped; window construction clips model inputs into [0, 1] (the attack
ball lives there) and counts how many cells that touched, while targets
are never clipped.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyDataError, UsageError
from .numerics import Tensor2


@dataclass
class WindowSample:
    """One sliding-window input with its one-step-ahead target."""

    x: Tensor2        # [w, d], clipped to [0, 1]
    y: float          # normalized next-step target, not clipped
    t: int            # stream index of the last row inside x


@dataclass
class Segment:
    """A contiguous, already-normalized slice of the initial buffer."""

    rows: np.ndarray          # [n, d] normalized, unclipped
    start: int                # stream index of rows[0]
    target_index: int
    out_of_range_cells: int = field(init=False)
    out_of_range_targets: int = field(init=False)

    def __post_init__(self):
        self.rows = np.asarray(self.rows, dtype=np.float64)
        outside = (self.rows < 0.0) | (self.rows > 1.0)
        self.out_of_range_cells = int(outside.sum())
        tgt = self.rows[:, self.target_index]
        self.out_of_range_targets = int(((tgt < 0.0) | (tgt > 1.0)).sum())

    def __len__(self):
        return self.rows.shape[0]


class RollingBuffer:
    """Fixed-capacity FIFO of raw feature rows with frozen min/max stats."""

    def __init__(self, capacity: int, n_features: int):
        if capacity < 4:
            raise UsageError(f"capacity must be >= 4 for a 75/25 split, got {capacity}")
        if n_features < 1:
            raise UsageError(f"n_features must be >= 1, got {n_features}")
        self.capacity = int(capacity)
        self.n_features = int(n_features)
        self._rows = deque(maxlen=self.capacity)
        self.total_pushed = 0
        self.norm_min = None
        self.norm_max = None

    def __len__(self):
        return len(self._rows)

    @property
    def is_full(self) -> bool:
        return len(self._rows) == self.capacity

    @property
    def stats_frozen(self) -> bool:
        return self.norm_min is not None

    def push(self, row):
        """Append a row; returns the evicted row if the buffer was full."""
        arr = np.asarray(row, dtype=np.float64)
        if arr.shape != (self.n_features,):
            raise UsageError(
                f"row shape {arr.shape} != ({self.n_features},)"
            )
        evicted = None
        if self.is_full:
            evicted = self._rows[0].copy()
        self._rows.append(arr.copy())
        self.total_pushed += 1
        if self.is_full and not self.stats_frozen:
            self._freeze_stats()
        return evicted

    def _freeze_stats(self):
        data = self.as_array()
        self.norm_min = data.min(axis=0)
        self.norm_max = data.max(axis=0)

    def as_array(self) -> np.ndarray:
        return np.array(self._rows, dtype=np.float64)

    def replace_tail(self, rows: np.ndarray) -> None:
        """Overwrite the newest len(rows) buffer rows (poisoning mode)."""
        rows = np.asarray(rows, dtype=np.float64)
        k = rows.shape[0]
        if k > len(self._rows) or rows.shape[1:] != (self.n_features,):
            raise UsageError("replace_tail rows do not fit the buffer")
        for i in range(k):
            self._rows[len(self._rows) - k + i] = rows[i].copy()

    def _require_frozen(self):
        if not self.stats_frozen:
            raise UsageError("normalization stats not frozen (buffer never filled)")

    def normalize(self, rows) -> np.ndarray:
        """(v - min)/(max - min) per feature; constant features map to 0.

        Out-of-range inputs map outside [0, 1] and pass through unclipped.
        """
        self._require_frozen()
        arr = np.asarray(rows, dtype=np.float64)
        span = self.norm_max - self.norm_min
        out = np.zeros_like(arr, dtype=np.float64)
        np.divide(arr - self.norm_min, span, out=out, where=span > 0.0)
        return out

    def denormalize(self, rows) -> np.ndarray:
        """Inverse of normalize (constant features map back to their min)."""
        self._require_frozen()
        arr = np.asarray(rows, dtype=np.float64)
        return arr * (self.norm_max - self.norm_min) + self.norm_min

    def split_initial(self, target_index: int = 0):
        """Chronological 75/25 split of the full buffer, normalized."""
        if not self.is_full:
            raise UsageError(
                f"split_initial needs a full buffer ({len(self)}/{self.capacity})"
            )
        rows_norm = self.normalize(self.as_array())
        n_train = (3 * self.capacity) // 4
        start = self.total_pushed - self.capacity
        train = Segment(rows_norm[:n_train], start, target_index)
        calib = Segment(rows_norm[n_train:], start + n_train, target_index)
        return train, calib

    def window(self, w: int, target_index: int = 0) -> Tensor2:
        """The newest w rows, normalized and clipped: the model's live input."""
        self._require_frozen()
        if w < 1 or w > len(self._rows):
            raise UsageError(f"window length {w} not in [1, {len(self._rows)}]")
        tail = np.array(
            [self._rows[i] for i in range(len(self._rows) - w, len(self._rows))]
        )
        return Tensor2(np.clip(self.normalize(tail), 0.0, 1.0))


def make_windows(segment: Segment, w: int):
    """All sliding-window samples of a segment: x covers w rows, y is the
    next row's target.  Sample count is len(segment) - w."""
    n = len(segment)
    if n - w < 1:
        raise EmptyDataError(
            f"segment of {n} rows is too short for window length {w}"
        )
    rows = segment.rows
    tgt = rows[:, segment.target_index]
    clipped = np.clip(rows, 0.0, 1.0)
    samples = []
    for i in range(n - w):
        samples.append(
            WindowSample(
                x=Tensor2(clipped[i : i + w]),
                y=float(tgt[i + w]),
                t=segment.start + i + w - 1,
            )
        )
    return samples


def stack_windows(samples) -> tuple:
    """(X [n, w, d], y [n], t [n]) arrays from a WindowSample sequence."""
    if len(samples) == 0:
        raise EmptyDataError("no window samples to stack")
    x = np.stack([s.x.data for s in samples])
    y = np.array([s.y for s in samples], dtype=np.float64)
    t = np.array([s.t for s in samples], dtype=np.int64)
    return x, y, t
