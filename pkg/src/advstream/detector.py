"""LID-based adversarial-input detection over forecaster representations.

Each window is summarized by one Local Intrinsic Dimensionality estimate
per selected activation layer, computed against a fixed reference batch of
clean windows.  A logistic classifier on those features separates clean
from attacked inputs; its decision threshold maximizes F1 on a held-out
20% split of the fitted data.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.spatial.distance import cdist
from scipy.special import expit

from .errors import ConfigurationError, FormatError, TrainingError, UsageError

DIST_FLOOR = 1e-12
LID_CAP = 1e6


@dataclass(frozen=True)
class LidConfig:
    k: int = 20
    batch: int = 100
    layers: tuple = ("post_pool", "hidden")

    def __post_init__(self):
        if not 1 <= self.k < self.batch:
            raise ConfigurationError(
                f"need 1 <= k < batch, got k={self.k}, batch={self.batch}"
            )
        if len(self.layers) == 0:
            raise ConfigurationError("at least one activation layer required")
        object.__setattr__(self, "layers", tuple(self.layers))


def lid_estimate_batch(queries: np.ndarray, reference: np.ndarray, k: int) -> np.ndarray:
    """Maximum-likelihood LID of each query against the reference batch.

    One exact-zero distance per query is treated as the query itself and
    excluded from the neighbor set.  Zero or tied distances are floored at
    1e-12 before the log; an all-equal neighborhood caps at 1e6.
    """
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    reference = np.atleast_2d(np.asarray(reference, dtype=np.float64))
    if reference.shape[0] < k or k < 1:
        raise ConfigurationError(
            f"reference batch of {reference.shape[0]} rows cannot serve k={k}"
        )
    dists = cdist(queries, reference)
    self_hits = dists == 0.0
    first_zero = self_hits & (self_hits.cumsum(axis=1) == 1)
    dists[first_zero] = np.inf

    k_small = np.sort(np.partition(dists, k - 1, axis=1)[:, :k], axis=1)
    if np.isinf(k_small).any():
        # self-exclusion consumed a needed slot (reference size == k): reuse
        # the largest finite neighbor distance so the estimator stays total
        finite = np.where(np.isinf(k_small), -np.inf, k_small)
        row_max = finite.max(axis=1)
        row_max = np.where(np.isfinite(row_max), row_max, DIST_FLOOR)
        k_small = np.where(np.isinf(k_small), row_max[:, None], k_small)
    k_small = np.maximum(k_small, DIST_FLOOR)
    r_k = k_small[:, -1]
    mean_log = np.log(k_small / r_k[:, None]).mean(axis=1)   # <= 0
    with np.errstate(divide="ignore"):
        est = np.where(mean_log == 0.0, LID_CAP, -1.0 / mean_log)
    return np.minimum(est, LID_CAP)


def lid_estimate(query, reference, k: int) -> float:
    return float(lid_estimate_batch(np.asarray(query)[None], reference, k)[0])


class LidFeaturizer:
    """Turns windows into per-layer LID features against a registered
    reference batch of clean windows."""

    def __init__(self, model, config: LidConfig = LidConfig()):
        self.model = model
        self.config = config
        self._reference = None      # layer name -> [batch, D] activations

    def register_reference(self, windows: np.ndarray) -> None:
        windows = np.asarray(windows, dtype=np.float64)
        if windows.shape[0] < self.config.batch:
            raise ConfigurationError(
                f"reference needs >= {self.config.batch} windows, got {windows.shape[0]}"
            )
        ref = windows[: self.config.batch]
        self._reference = self.model.activations_batch(ref, self.config.layers)

    def featurize_batch(self, windows: np.ndarray) -> np.ndarray:
        """[B, n_layers] LID features, deterministic per reference batch."""
        if self._reference is None:
            raise UsageError("register_reference() before featurize")
        acts = self.model.activations_batch(
            np.asarray(windows, dtype=np.float64), self.config.layers
        )
        cols = [
            lid_estimate_batch(acts[name], self._reference[name], self.config.k)
            for name in self.config.layers
        ]
        return np.column_stack(cols)

    def featurize(self, window) -> np.ndarray:
        arr = np.asarray(window, dtype=np.float64)
        return self.featurize_batch(arr[None])[0]

    def reference_sha256(self) -> str:
        if self._reference is None:
            raise UsageError("no reference batch registered")
        h = hashlib.sha256()
        for name in self.config.layers:
            h.update(name.encode())
            h.update(self._reference[name].tobytes())
        return h.hexdigest()


@dataclass
class DetectorModel:
    lid: LidConfig
    weights: np.ndarray
    bias: float
    threshold: float
    feat_mean: np.ndarray = field(repr=False)
    feat_std: np.ndarray = field(repr=False)

    def __post_init__(self):
        self.weights = np.asarray(self.weights, dtype=np.float64)
        if self.weights.shape != (len(self.lid.layers),):
            raise ConfigurationError("one classifier weight per selected layer")

    def score(self, features: np.ndarray) -> np.ndarray:
        """Probability-like adversarial score in (0, 1) per row."""
        f = (np.atleast_2d(features) - self.feat_mean) / self.feat_std
        return expit(f @ self.weights + self.bias)

    def flag(self, features: np.ndarray) -> np.ndarray:
        return self.score(features) >= self.threshold


def _logistic_gd(x: np.ndarray, y: np.ndarray, lr: float, epochs: int) -> tuple:
    w = np.zeros(x.shape[1])
    b = 0.0
    n = x.shape[0]
    for _ in range(epochs):
        p = expit(x @ w + b)
        err = p - y
        w -= lr * (x.T @ err) / n
        b -= lr * float(err.mean())
    return w, b


def _f1(tp: int, fp: int, fn: int) -> float:
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    if precision + recall == 0.0:
        return 0.0
    return 2.0 * precision * recall / (precision + recall)


def fit_detector(
    featurizer: LidFeaturizer,
    clean_windows: np.ndarray,
    adv_windows: np.ndarray,
    seed: int,
    lr: float = 0.5,
    epochs: int = 400,
) -> DetectorModel:
    """Logistic regression on LID features, deterministic per seed.

    The decision threshold maximizes F1 over the held-out 20% split
    (ties resolve to the smallest candidate threshold).
    """
    clean_windows = np.asarray(clean_windows, dtype=np.float64)
    adv_windows = np.asarray(adv_windows, dtype=np.float64)
    if clean_windows.shape[0] == 0 or adv_windows.shape[0] == 0:
        raise TrainingError("detector training needs both classes non-empty")
    feats = np.vstack(
        [featurizer.featurize_batch(clean_windows), featurizer.featurize_batch(adv_windows)]
    )
    labels = np.concatenate(
        [np.zeros(clean_windows.shape[0]), np.ones(adv_windows.shape[0])]
    )
    rng = np.random.default_rng(np.random.SeedSequence([404149109, int(seed)]))
    order = rng.permutation(feats.shape[0])
    n_hold = max(1, int(round(0.2 * feats.shape[0])))
    hold, fit = order[:n_hold], order[n_hold:]
    if len(fit) == 0 or len(np.unique(labels[fit])) < 2:
        raise TrainingError("fit split degenerated to a single class")

    mean = feats[fit].mean(axis=0)
    std = np.maximum(feats[fit].std(axis=0), 1e-12)
    x_fit = (feats[fit] - mean) / std
    w, b = _logistic_gd(x_fit, labels[fit], lr, epochs)

    x_hold = (feats[hold] - mean) / std
    scores = expit(x_hold @ w + b)
    truth = labels[hold].astype(bool)
    best_f1, best_t = -1.0, 0.5
    for t in np.unique(scores):
        pred = scores >= t
        f1 = _f1(
            int(np.sum(pred & truth)),
            int(np.sum(pred & ~truth)),
            int(np.sum(~pred & truth)),
        )
        if f1 > best_f1:
            best_f1, best_t = f1, float(t)
    return DetectorModel(
        lid=featurizer.config,
        weights=w,
        bias=float(b),
        threshold=best_t,
        feat_mean=mean,
        feat_std=std,
    )


def classification_metrics(truth, predicted) -> tuple:
    """(precision, recall, f1) with attacked as the positive class;
    zero denominators yield 0."""
    truth = np.asarray(truth, dtype=bool)
    predicted = np.asarray(predicted, dtype=bool)
    if truth.shape != predicted.shape:
        raise UsageError("truth/prediction length mismatch")
    tp = int(np.sum(predicted & truth))
    fp = int(np.sum(predicted & ~truth))
    fn = int(np.sum(~predicted & truth))
    precision = tp / (tp + fp) if tp + fp else 0.0
    recall = tp / (tp + fn) if tp + fn else 0.0
    f1 = (
        2.0 * precision * recall / (precision + recall)
        if precision + recall
        else 0.0
    )
    return precision, recall, f1


def score_stream(detector: DetectorModel, records) -> tuple:
    """Apply the detector threshold to per-step scores and compare against
    the ground-truth attacked flags."""
    truth, scores = [], []
    for r in records:
        if r.detector_score is None:
            raise UsageError(f"record t={r.t} carries no detector score")
        truth.append(r.attacked)
        scores.append(r.detector_score)
    pred = np.asarray(scores) >= detector.threshold
    return classification_metrics(truth, pred)


DETECTOR_FORMAT_VERSION = 1


def save_detector(detector: DetectorModel, reference_windows: np.ndarray, out_dir) -> None:
    """Persist classifier plus the clean reference windows the LID features
    were computed against (activations are model-dependent, windows are not)."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    np.savez(out / "reference.npz", windows=np.asarray(reference_windows, dtype=np.float64))
    payload = {
        "version": DETECTOR_FORMAT_VERSION,
        "k": detector.lid.k,
        "batch": detector.lid.batch,
        "layers": list(detector.lid.layers),
        "weights": detector.weights.tolist(),
        "bias": detector.bias,
        "threshold": detector.threshold,
        "feat_mean": detector.feat_mean.tolist(),
        "feat_std": detector.feat_std.tolist(),
    }
    (out / "detector.json").write_text(json.dumps(payload, indent=2))


def load_detector(detector_dir) -> tuple:
    """Returns (DetectorModel, reference windows [N, w, d])."""
    path = Path(detector_dir)
    try:
        payload = json.loads((path / "detector.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable detector file: {exc}") from exc
    if payload.get("version") != DETECTOR_FORMAT_VERSION:
        raise FormatError(f"unsupported detector version {payload.get('version')}")
    detector = DetectorModel(
        lid=LidConfig(payload["k"], payload["batch"], tuple(payload["layers"])),
        weights=np.array(payload["weights"]),
        bias=payload["bias"],
        threshold=payload["threshold"],
        feat_mean=np.array(payload["feat_mean"]),
        feat_std=np.array(payload["feat_std"]),
    )
    with np.load(path / "reference.npz") as archive:
        reference = archive["windows"]
    return detector, reference
