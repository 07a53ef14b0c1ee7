"""Split conformalized quantile regression.

Conformity scores E = max(q_lo - y, y - q_hi) are collected on the
calibration segment; the correction is their nominal-rank quantile at
level (1 - miscoverage) * (1 + 1/n).  When that level exceeds 1 (small
calibration sets) the correction clamps to the max score, the standard
conservative convention.  Negative corrections (over-wide raw intervals)
are applied, flooring at a width-zero collapse to the interval midpoint.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .buffer import stack_windows
from .errors import EmptyDataError, FormatError, UsageError
from .quantiles import nominal_rank, nominal_rank_quantile


def conformity_score(q_lo, q_hi, y):
    """max(q_lo - y, y - q_hi); negative iff y lies strictly inside."""
    return np.maximum(np.asarray(q_lo) - y, np.asarray(y) - q_hi)


@dataclass
class ConformalCalibrator:
    miscoverage: float
    correction: float
    calib_size: int
    scores: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.scores = np.asarray(self.scores, dtype=np.float64)
        if self.calib_size != self.scores.size or self.calib_size < 1:
            raise UsageError("calib_size must equal the retained score count (>= 1)")

    def sha256(self) -> str:
        h = hashlib.sha256()
        h.update(repr(self.miscoverage).encode())
        h.update(repr(self.correction).encode())
        h.update(self.scores.tobytes())
        return h.hexdigest()


@dataclass
class IntervalRecord:
    lo: float
    hi: float
    width: float


def calibrate_from_scores(scores, miscoverage: float) -> ConformalCalibrator:
    scores = np.asarray(scores, dtype=np.float64).ravel()
    n = scores.size
    if n < 1:
        raise EmptyDataError("empty calibration score set")
    if not 0.0 < miscoverage < 1.0:
        raise UsageError(f"miscoverage must be in (0,1), got {miscoverage}")
    level = (1.0 - miscoverage) * (1.0 + 1.0 / n)
    correction = nominal_rank_quantile(scores, level)
    return ConformalCalibrator(
        miscoverage=float(miscoverage),
        correction=float(correction),
        calib_size=n,
        scores=scores,
    )


def calibrate(model, calib_windows, miscoverage: float) -> ConformalCalibrator:
    """Score the calibration windows through any predictor exposing
    predict_batch(X) -> (y_hat, q_lo, q_hi) or predict(x)."""
    if len(calib_windows) < 1:
        raise EmptyDataError("empty calibration window set")
    if hasattr(model, "predict_batch"):
        x, y, _ = stack_windows(calib_windows)
        _, q_lo, q_hi = model.predict_batch(x)
    else:
        outs = [model.predict(s) for s in calib_windows]
        q_lo = np.array([o.q_lo for o in outs])
        q_hi = np.array([o.q_hi for o in outs])
        y = np.array([s.y for s in calib_windows])
    return calibrate_from_scores(conformity_score(q_lo, q_hi, y), miscoverage)


def conformal_interval(calibrator: ConformalCalibrator, q_lo: float, q_hi: float) -> IntervalRecord:
    lo, hi = interval_arrays(calibrator, np.asarray([q_lo]), np.asarray([q_hi]))
    return IntervalRecord(float(lo[0]), float(hi[0]), float(hi[0] - lo[0]))


def interval_arrays(calibrator: ConformalCalibrator, q_lo: np.ndarray, q_hi: np.ndarray) -> tuple:
    """Vectorized conformal intervals; collapse inverted ones to midpoints."""
    c = calibrator.correction
    lo = q_lo - c
    hi = q_hi + c
    inverted = hi < lo
    if np.any(inverted):
        mid = 0.5 * (np.asarray(q_lo) + np.asarray(q_hi))
        lo = np.where(inverted, mid, lo)
        hi = np.where(inverted, mid, hi)
    return lo, hi


def recomputed_correction(calibrator: ConformalCalibrator) -> float:
    """Re-derive the correction from the retained scores (audit helper)."""
    n = calibrator.calib_size
    level = (1.0 - calibrator.miscoverage) * (1.0 + 1.0 / n)
    k = nominal_rank(level, n)
    return float(np.sort(calibrator.scores)[k - 1])


CALIBRATOR_FORMAT_VERSION = 1


def save_calibrator(calibrator: ConformalCalibrator, path) -> None:
    payload = {
        "version": CALIBRATOR_FORMAT_VERSION,
        "miscoverage": calibrator.miscoverage,
        "correction": calibrator.correction,
        "calib_size": calibrator.calib_size,
        "scores": calibrator.scores.tolist(),
    }
    Path(path).write_text(json.dumps(payload))


def load_calibrator(path) -> ConformalCalibrator:
    try:
        payload = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable calibrator file: {exc}") from exc
    if payload.get("version") != CALIBRATOR_FORMAT_VERSION:
        raise FormatError(f"unsupported calibrator version {payload.get('version')}")
    cal = ConformalCalibrator(
        miscoverage=payload["miscoverage"],
        correction=payload["correction"],
        calib_size=payload["calib_size"],
        scores=np.array(payload["scores"], dtype=np.float64),
    )
    if recomputed_correction(cal) != cal.correction:
        raise FormatError("calibrator correction does not match its scores")
    return cal
