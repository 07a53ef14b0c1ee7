"""The three gradient attacks side by side on one window.

Trains a small quantile forecaster on an easy synthetic task, then perturbs
a single input window with FGSM, BIM, and NI-FGSM at the same budget and
prints how far the point forecast moves while the perturbation stays inside
the epsilon ball and the [0, 1] box.  Run:

    python3 demos/attack_kinds.py
"""

import numpy as np

from advstream.attacks import AttackConfig, attack
from advstream.forecaster import ForecasterConfig, train

WINDOW, D = 16, 2
EPSILON = 0.10


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
    rng = np.random.default_rng(11)
    cfg = ForecasterConfig(window=WINDOW, conv_kernels=8, kernel_width=3,
                           hidden=16, dropout=0.0, epochs=40,
                           batch_size=32, learning_rate=1e-2)
    model = train(make_samples(rng, 600), cfg, seed=5)

    x = np.clip(0.5 + rng.normal(0, 0.03, (WINDOW, D)), 0, 1)
    y_true = 0.5
    clean = model.predict(x)
    print(f"clean forecast: y_hat={clean.y_hat:.4f} (truth {y_true})\n")

    print(f"{'kind':8} {'y_hat_adv':>10} {'shift':>8} {'linf':>8} {'in box':>7}")
    for kind in ("fgsm", "bim", "nifgsm"):
        rec = attack(model, x, y_true, AttackConfig(kind=kind, epsilon=EPSILON))
        adv = model.predict(rec.x_adv.data)
        in_box = 0.0 <= rec.x_adv.data.min() and rec.x_adv.data.max() <= 1.0
        print(f"{kind:8} {adv.y_hat:>10.4f} {adv.y_hat - clean.y_hat:>+8.4f} "
              f"{rec.linf:>8.4f} {str(in_box):>7}")

    print(f"\nbudget epsilon = {EPSILON}: every linf is within it, "
          "iterative kinds move the forecast further")


if __name__ == "__main__":
    main()
