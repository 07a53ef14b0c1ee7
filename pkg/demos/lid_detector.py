"""Local intrinsic dimensionality as an adversarial fingerprint.

First sanity-checks the maximum-likelihood LID estimator on point clouds of
known dimension, then fits the logistic detector on per-layer LID features
of clean versus FGSM-perturbed windows of a small forecaster.  Adversarial
inputs sit off the data manifold, so their neighborhoods look
higher-dimensional.  Run:

    python3 demos/lid_detector.py
"""

import numpy as np

from advstream.attacks import AttackConfig, attack_batch
from advstream.detector import (
    LidConfig,
    LidFeaturizer,
    classification_metrics,
    fit_detector,
    lid_estimate_batch,
)
from advstream.forecaster import ForecasterConfig, train

WINDOW, D = 16, 2


def lid_sanity():
    rng = np.random.default_rng(0)
    for dims, label in ((1, "line"), (2, "plane")):
        basis = np.linalg.qr(rng.normal(size=(8, 8)))[0][:, :dims]
        pts = rng.uniform(0, 1, size=(150, dims)) @ basis.T
        est = lid_estimate_batch(pts[100:], pts[:100], k=20)
        print(f"  {label} in 8-dim ambient space: mean LID {est.mean():.3f} "
              f"(true {dims})")


def make_samples(rng, n):
    level = rng.uniform(0.2, 0.8, size=n)
    x = np.clip(level[:, None, None] + rng.normal(0, 0.03, (n, WINDOW, D)), 0, 1)

    class Sample:
        def __init__(self, xi, yi, t):
            self.x = type("T", (), {"data": xi})()
            self.y = float(yi)
            self.t = t

    return [Sample(x[i], level[i], i) for i in range(n)]


def main():
    print("estimator sanity on known manifolds:")
    lid_sanity()

    rng = np.random.default_rng(21)
    cfg = ForecasterConfig(window=WINDOW, conv_kernels=8, kernel_width=3,
                           hidden=16, dropout=0.0, epochs=40,
                           batch_size=32, learning_rate=1e-2)
    model = train(make_samples(rng, 600), cfg, seed=5)

    level = rng.uniform(0.2, 0.8, size=360)
    clean = np.clip(level[:, None, None] + rng.normal(0, 0.03, (360, WINDOW, D)), 0, 1)
    adv, failed = attack_batch(model, clean, level, AttackConfig("fgsm", 0.10))
    assert not failed.any()

    featurizer = LidFeaturizer(model, LidConfig(k=10, batch=80))
    featurizer.register_reference(clean[:100])

    det = fit_detector(featurizer, clean[100:], adv[100:], seed=0)
    feats = featurizer.featurize_batch(np.concatenate([clean[100:], adv[100:]]))
    labels = [False] * 260 + [True] * 260
    precision, recall, f1 = classification_metrics(labels, det.flag(feats))
    print(f"\ndetector on clean vs fgsm(eps=0.10) windows: "
          f"precision={precision:.3f} recall={recall:.3f} f1={f1:.3f}")


if __name__ == "__main__":
    main()
