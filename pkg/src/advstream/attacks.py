"""L-infinity bounded perturbations of input windows: FGSM, BIM, NI-FGSM.

All three maximize the squared error of the point forecast against the
true next value.  Perturbations live in normalized units inside the
epsilon-ball around the clean window intersected with [0, 1].  By default
the whole window is perturbed; `scope="last_row"` restricts the adversary
to the newest observation.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AttackError, ConfigurationError
from .forecaster import _window_array
from .numerics import Tensor2

KINDS = ("fgsm", "bim", "nifgsm")
SCOPES = ("window", "last_row")
LINF_TOL = 1e-9
# replication presets from the evaluated epsilon grid; any positive value works
EPSILON_PRESETS = (0.05, 0.10, 0.15)


@dataclass(frozen=True)
class AttackConfig:
    kind: str
    epsilon: float
    iterations: int = 10
    step: float | None = None      # default epsilon / iterations
    momentum: float = 1.0
    scope: str = "window"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ConfigurationError(f"kind must be one of {KINDS}, got {self.kind!r}")
        if not self.epsilon >= 0.0:
            raise ConfigurationError(f"epsilon must be >= 0, got {self.epsilon}")
        if self.iterations < 1:
            raise ConfigurationError(f"iterations must be >= 1, got {self.iterations}")
        if self.momentum < 0.0:
            raise ConfigurationError(f"momentum must be >= 0, got {self.momentum}")
        if self.scope not in SCOPES:
            raise ConfigurationError(f"scope must be one of {SCOPES}, got {self.scope!r}")
        if self.step is not None:
            if self.step <= 0.0:
                raise ConfigurationError(f"step must be positive, got {self.step}")
            if self.kind != "fgsm" and self.step * self.iterations < self.epsilon - 1e-12:
                raise ConfigurationError(
                    "step * iterations must reach epsilon for iterative attacks"
                )

    @property
    def effective_step(self) -> float:
        if self.step is not None:
            return self.step
        if self.kind == "fgsm":
            return self.epsilon
        return self.epsilon / self.iterations


@dataclass
class PerturbationRecord:
    t: int
    x_clean: Tensor2
    x_adv: Tensor2
    linf: float
    kind: str
    epsilon: float

    def __post_init__(self):
        if self.linf > self.epsilon + LINF_TOL:
            raise AttackError(
                f"perturbation linf {self.linf} exceeds epsilon {self.epsilon}"
            )
        adv = self.x_adv.data
        if adv.min() < 0.0 or adv.max() > 1.0:
            raise AttackError("adversarial window escapes [0, 1]")


def _scope_mask(config: AttackConfig, shape) -> np.ndarray:
    if config.scope == "window":
        return np.ones(shape[-2:])
    mask = np.zeros(shape[-2:])
    mask[-1, :] = 1.0
    return mask


def _gradients(model, x: np.ndarray, y: np.ndarray, failed: np.ndarray) -> np.ndarray:
    g = model.input_gradient_batch(x, y)
    bad = ~np.isfinite(g).all(axis=(1, 2))
    if np.any(bad):
        failed |= bad
        g = np.where(bad[:, None, None], 0.0, g)
    return g


def attack_batch(model, x: np.ndarray, y_true, config: AttackConfig) -> tuple:
    """Perturb a batch of windows; returns (x_adv [B,w,d], failed [B]).

    Samples whose gradient turns non-finite at any iteration are reverted
    to their clean windows and flagged in `failed` (the caller records the
    attack error and leaves the step clean).
    """
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y_true, dtype=np.float64)
    mask = _scope_mask(config, x.shape)
    eps = config.epsilon
    step = config.effective_step
    failed = np.zeros(x.shape[0], dtype=bool)

    if config.kind == "fgsm":
        g = _gradients(model, x, y, failed)
        adv = np.clip(x + eps * np.sign(g) * mask, 0.0, 1.0)
    elif config.kind == "bim":
        adv = x.copy()
        for _ in range(config.iterations):
            g = _gradients(model, adv, y, failed)
            adv = adv + step * np.sign(g) * mask
            adv = x + np.clip(adv - x, -eps, eps)
            adv = np.clip(adv, 0.0, 1.0)
    else:
        adv = x.copy()
        g_acc = np.zeros_like(x)
        mu = config.momentum
        for _ in range(config.iterations):
            x_nes = adv + step * mu * g_acc
            g = _gradients(model, x_nes, y, failed)
            norms = np.abs(g).sum(axis=(1, 2))
            scale = np.divide(
                1.0, norms, out=np.zeros_like(norms), where=norms > 0.0
            )
            g_acc = mu * g_acc + g * scale[:, None, None]
            adv = adv + step * np.sign(g_acc) * mask
            adv = x + np.clip(adv - x, -eps, eps)
            adv = np.clip(adv, 0.0, 1.0)

    if np.any(failed):
        adv = np.where(failed[:, None, None], x, adv)
    return adv, failed


def _single(model, x, y_true, config: AttackConfig, t: int) -> PerturbationRecord:
    clean = _window_array(x)
    adv, failed = attack_batch(model, clean[None], [float(y_true)], config)
    if failed[0]:
        raise AttackError(f"non-finite gradient during {config.kind} at t={t}")
    linf = float(np.abs(adv[0] - clean).max())
    return PerturbationRecord(
        t=t,
        x_clean=Tensor2(clean),
        x_adv=Tensor2(adv[0]),
        linf=linf,
        kind=config.kind,
        epsilon=config.epsilon,
    )


def fgsm(model, x, y_true, config: AttackConfig, t: int = -1) -> PerturbationRecord:
    """x_adv = clip_[0,1](x + epsilon * sign(grad)); sign(0) = 0."""
    return _single(model, x, y_true, _rekind(config, "fgsm"), t)


def bim(model, x, y_true, config: AttackConfig, t: int = -1) -> PerturbationRecord:
    """Iterated FGSM with per-step projection into the epsilon-ball."""
    return _single(model, x, y_true, _rekind(config, "bim"), t)


def nifgsm(model, x, y_true, config: AttackConfig, t: int = -1) -> PerturbationRecord:
    """Nesterov lookahead plus L1-normalized momentum accumulation."""
    return _single(model, x, y_true, _rekind(config, "nifgsm"), t)


def attack(model, x, y_true, config: AttackConfig, t: int = -1) -> PerturbationRecord:
    """Dispatch on config.kind."""
    return _single(model, x, y_true, config, t)


def _rekind(config: AttackConfig, kind: str) -> AttackConfig:
    if config.kind == kind:
        return config
    return AttackConfig(
        kind=kind,
        epsilon=config.epsilon,
        iterations=config.iterations,
        step=config.step,
        momentum=config.momentum,
        scope=config.scope,
    )
