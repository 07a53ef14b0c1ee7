"""Bounded gradient attacks: sign arithmetic, projections, strength order."""

from types import SimpleNamespace

import numpy as np
import pytest

from advstream.attacks import (
    EPSILON_PRESETS,
    KINDS,
    LINF_TOL,
    AttackConfig,
    PerturbationRecord,
    attack,
    attack_batch,
    bim,
    fgsm,
    nifgsm,
)
from advstream.errors import AttackError, ConfigurationError
from advstream.forecaster import ForecasterConfig, train
from advstream.numerics import Tensor2


class LinearModel:
    """point(x) = sum(w * x), so the squared-error gradient is
    2 * (point - y) * w, exact and hand-checkable."""

    def __init__(self, w):
        self.w = np.asarray(w, dtype=np.float64)

    def _point(self, x):
        return (np.asarray(x) * self.w).sum(axis=(1, 2))

    def predict_batch(self, x):
        p = self._point(x)
        return p, p - 0.1, p + 0.1

    def input_gradient_batch(self, x, y):
        r = self._point(x) - np.asarray(y, dtype=np.float64)
        return 2.0 * r[:, None, None] * np.broadcast_to(self.w, np.asarray(x).shape)


class NanGradientModel(LinearModel):
    """Poisons the gradient of selected batch rows with NaN."""

    def __init__(self, w, bad_rows):
        super().__init__(w)
        self.bad_rows = set(bad_rows)

    def input_gradient_batch(self, x, y):
        g = super().input_gradient_batch(x, y)
        for i in self.bad_rows:
            if i < g.shape[0]:
                g[i] = np.nan
        return g


def make_samples(rng, n, window=16, d=2):
    level = rng.uniform(0.2, 0.8, size=n)
    x = np.clip(level[:, None, None] + rng.normal(0, 0.03, (n, window, d)), 0, 1)
    return [
        SimpleNamespace(x=SimpleNamespace(data=x[i]), y=float(level[i]), t=i)
        for i in range(n)
    ]


@pytest.fixture(scope="module")
def net_model():
    cfg = ForecasterConfig(window=16, conv_kernels=8, kernel_width=3, pool=2,
                           hidden=16, miscoverage=0.2, epochs=40, batch_size=32,
                           learning_rate=1e-2, dropout=0.0)
    return train(make_samples(np.random.default_rng(77), 600), cfg, seed=5)


@pytest.fixture(scope="module")
def attack_xy():
    samples = make_samples(np.random.default_rng(55), 300)
    return np.stack([s.x.data for s in samples]), np.array([s.y for s in samples])


class TestFgsmArithmetic:
    def test_sign_step(self):
        model = LinearModel(np.ones((1, 1)))
        x = np.array([[[0.5]]])
        # point = 0.5, y = 0 -> positive gradient -> step up by epsilon
        rec = fgsm(model, x[0], 0.0, AttackConfig("fgsm", 0.05), t=3)
        assert rec.x_adv.data[0, 0] == pytest.approx(0.55)
        assert rec.linf == pytest.approx(0.05)
        assert rec.t == 3 and rec.kind == "fgsm"
        # y above the prediction -> negative gradient -> step down
        rec2 = fgsm(model, x[0], 2.0, AttackConfig("fgsm", 0.05))
        assert rec2.x_adv.data[0, 0] == pytest.approx(0.45)

    def test_box_clip_binds(self):
        model = LinearModel(np.ones((1, 1)))
        rec = fgsm(model, np.array([[0.99]]), 0.0, AttackConfig("fgsm", 0.05))
        assert rec.x_adv.data[0, 0] == 1.0
        assert rec.linf == pytest.approx(0.01)

    def test_zero_gradient_identity(self):
        model = LinearModel(np.ones((2, 1)))
        x = np.array([[0.3], [0.4]])
        y = 0.7  # exactly point(x) -> zero residual -> sign(0) = 0
        rec = fgsm(model, x, y, AttackConfig("fgsm", 0.05))
        assert np.array_equal(rec.x_adv.data, x)
        assert rec.linf == 0.0

    def test_epsilon_zero_identity(self, net_model, attack_xy):
        x, y = attack_xy
        for kind in KINDS:
            adv, failed = attack_batch(net_model, x[:8], y[:8],
                                       AttackConfig(kind, 0.0))
            assert not failed.any()
            assert np.array_equal(adv, x[:8])


class TestIterativeRecurrences:
    def test_bim_one_iteration_equals_fgsm(self, net_model, attack_xy):
        x, y = attack_xy
        a1, _ = attack_batch(net_model, x[:16], y[:16],
                             AttackConfig("bim", 0.05, iterations=1, step=0.05))
        a2, _ = attack_batch(net_model, x[:16], y[:16], AttackConfig("fgsm", 0.05))
        assert np.array_equal(a1, a2)

    def test_nifgsm_zero_momentum_one_iteration_equals_fgsm(self, net_model, attack_xy):
        x, y = attack_xy
        a1, _ = attack_batch(
            net_model, x[:16], y[:16],
            AttackConfig("nifgsm", 0.05, iterations=1, step=0.05, momentum=0.0),
        )
        a2, _ = attack_batch(net_model, x[:16], y[:16], AttackConfig("fgsm", 0.05))
        assert np.array_equal(a1, a2)

    def test_nifgsm_two_step_hand_trace(self):
        # single cell, point = 2x, y = 0: gradient 8x is always positive, so
        # each iteration steps up, the L1-normalized momentum stays +1-ish,
        # and the ball projection pins the result at x0 + epsilon
        model = LinearModel(np.full((1, 1), 2.0))
        x = np.array([[[0.5]]])
        cfg = AttackConfig("nifgsm", epsilon=0.2, iterations=2, step=0.1, momentum=1.0)
        adv, failed = attack_batch(model, x, [0.0], cfg)
        assert not failed.any()
        assert adv[0, 0, 0] == pytest.approx(0.7)

    def test_bim_per_step_projection(self):
        # step larger than epsilon: the ball projection must bind every step
        model = LinearModel(np.ones((1, 1)))
        cfg = AttackConfig("bim", epsilon=0.03, iterations=4, step=0.5)
        adv, _ = attack_batch(model, np.array([[[0.5]]]), [0.0], cfg)
        assert adv[0, 0, 0] == pytest.approx(0.53)


class TestGuarantees:
    @pytest.mark.parametrize("kind", KINDS)
    @pytest.mark.parametrize("epsilon", EPSILON_PRESETS)
    def test_ball_and_box(self, net_model, attack_xy, kind, epsilon):
        x, y = attack_xy
        adv, failed = attack_batch(net_model, x[:64], y[:64],
                                   AttackConfig(kind, epsilon))
        assert not failed.any()
        assert np.abs(adv - x[:64]).max() <= epsilon + LINF_TOL
        assert adv.min() >= 0.0 and adv.max() <= 1.0

    def test_deterministic(self, net_model, attack_xy):
        x, y = attack_xy
        cfg = AttackConfig("nifgsm", 0.1)
        a1, _ = attack_batch(net_model, x[:32], y[:32], cfg)
        a2, _ = attack_batch(net_model, x[:32], y[:32], cfg)
        assert np.array_equal(a1, a2)

    def test_last_row_scope(self, net_model, attack_xy):
        x, y = attack_xy
        for kind in KINDS:
            cfg = AttackConfig(kind, 0.1, scope="last_row")
            adv, _ = attack_batch(net_model, x[:16], y[:16], cfg)
            assert np.array_equal(adv[:, :-1, :], x[:16, :-1, :])
            assert np.abs(adv[:, -1, :] - x[:16, -1, :]).max() > 0.0


class TestStrengthOrdering:
    def _mse(self, model, adv, y):
        p, _, _ = model.predict_batch(adv)
        return float(np.mean((p - y) ** 2))

    def test_attacks_degrade_prediction(self, net_model, attack_xy):
        x, y = attack_xy
        p, _, _ = net_model.predict_batch(x)
        clean = float(np.mean((p - y) ** 2))
        for kind in KINDS:
            adv, _ = attack_batch(net_model, x, y, AttackConfig(kind, 0.05))
            assert self._mse(net_model, adv, y) >= 5.0 * clean

    def test_bim_at_least_fgsm(self, net_model, attack_xy):
        x, y = attack_xy
        for eps in (0.05, 0.10):
            a_f, _ = attack_batch(net_model, x, y, AttackConfig("fgsm", eps))
            a_b, _ = attack_batch(net_model, x, y, AttackConfig("bim", eps))
            assert self._mse(net_model, a_b, y) >= self._mse(net_model, a_f, y)

    def test_epsilon_monotone(self, net_model, attack_xy):
        x, y = attack_xy
        for kind in KINDS:
            losses = [
                self._mse(net_model,
                          attack_batch(net_model, x, y, AttackConfig(kind, e))[0], y)
                for e in (0.02, 0.05, 0.10)
            ]
            assert losses[0] <= losses[1] <= losses[2]

    def test_untargeted_moves_away(self, net_model, attack_xy):
        x, y = attack_xy
        p_clean, _, _ = net_model.predict_batch(x)
        adv, _ = attack_batch(net_model, x, y, AttackConfig("fgsm", 0.05))
        p_adv, _, _ = net_model.predict_batch(adv)
        moved = np.abs(p_adv - y) >= np.abs(p_clean - y) - 1e-12
        assert np.mean(moved) >= 0.9


class TestFailureHandling:
    def test_batch_reverts_failed_rows(self):
        model = NanGradientModel(np.ones((4, 2)), bad_rows=[1, 3])
        x = np.random.default_rng(0).uniform(0.2, 0.8, size=(5, 4, 2))
        adv, failed = attack_batch(model, x, np.zeros(5), AttackConfig("bim", 0.1))
        assert failed.tolist() == [False, True, False, True, False]
        assert np.array_equal(adv[1], x[1]) and np.array_equal(adv[3], x[3])
        assert not np.array_equal(adv[0], x[0])

    def test_single_attack_raises(self):
        model = NanGradientModel(np.ones((4, 2)), bad_rows=[0])
        x = np.full((4, 2), 0.5)
        with pytest.raises(AttackError):
            attack(model, x, 0.0, AttackConfig("fgsm", 0.1), t=7)

    def test_dispatch_and_rekind(self):
        model = LinearModel(np.ones((2, 2)))
        x = np.full((2, 2), 0.5)
        cfg = AttackConfig("fgsm", 0.05)
        assert attack(model, x, 0.0, cfg).kind == "fgsm"
        assert bim(model, x, 0.0, cfg).kind == "bim"
        assert nifgsm(model, x, 0.0, cfg).kind == "nifgsm"


class TestValidation:
    @pytest.mark.parametrize(
        "kwargs",
        [
            dict(kind="pgd", epsilon=0.1),
            dict(kind="fgsm", epsilon=-0.01),
            dict(kind="bim", epsilon=0.1, iterations=0),
            dict(kind="bim", epsilon=0.1, step=0.0),
            dict(kind="bim", epsilon=0.1, step=-0.01),
            dict(kind="bim", epsilon=0.1, iterations=4, step=0.01),
            dict(kind="nifgsm", epsilon=0.1, momentum=-0.5),
            dict(kind="fgsm", epsilon=0.1, scope="rows"),
        ],
    )
    def test_config_rejects(self, kwargs):
        with pytest.raises(ConfigurationError):
            AttackConfig(**kwargs)

    def test_default_steps(self):
        assert AttackConfig("fgsm", 0.1).effective_step == pytest.approx(0.1)
        assert AttackConfig("bim", 0.1, iterations=10).effective_step == \
            pytest.approx(0.01)
        assert AttackConfig("bim", 0.1, iterations=4, step=0.05).effective_step == 0.05

    def test_fgsm_small_step_allowed(self):
        # the reach constraint applies to iterative kinds only
        AttackConfig("fgsm", 0.1, iterations=1, step=0.01)

    def test_record_enforces_ball(self):
        good = Tensor2(np.full((2, 2), 0.5))
        with pytest.raises(AttackError):
            PerturbationRecord(t=0, x_clean=good, x_adv=Tensor2(np.full((2, 2), 0.7)),
                               linf=0.2, kind="fgsm", epsilon=0.1)

    def test_record_enforces_box(self):
        good = Tensor2(np.full((2, 2), 0.95))
        with pytest.raises(AttackError):
            PerturbationRecord(t=0, x_clean=good, x_adv=Tensor2(np.full((2, 2), 1.05)),
                               linf=0.1, kind="fgsm", epsilon=0.1)
