"""The convolutional one-step-ahead forecaster with three output heads.

Head 0 is the point forecast, heads 1 and 2 are the lower/upper raw
quantiles at alpha_lo = miscoverage/2 and alpha_hi = 1 - miscoverage/2.
Training is plain mini-batch gradient descent, fully determined by one
seed (init, shuffling, dropout masks).  By default the three heads share
one trunk; a separate-models mode exists behind a config flag.
"""

from __future__ import annotations

import dataclasses
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .buffer import WindowSample, stack_windows
from .errors import (
    ConfigurationError,
    EmptyDataError,
    FormatError,
    TrainingError,
    UsageError,
)
from .numerics import (
    Conv1D,
    Dense,
    Dropout,
    Flatten,
    MaxPool1D,
    Network,
    ReLU,
    Tensor2,
    glorot_uniform,
    pinball_grad_array,
    pinball_loss_array,
)

MIN_TRAIN_SAMPLES = 100
_PREDICT_CHUNK = 8192

# activation capture points used by the LID detector: output of the pooling
# layer and of the hidden ReLU (the representation feeding the head layer)
ACTIVATION_TAPS = {"post_pool": 2, "hidden": 6}


@dataclass(frozen=True)
class ForecasterConfig:
    window: int = 60
    conv_kernels: int = 16
    kernel_width: int = 5
    pool: int = 2
    dropout: float = 0.2
    hidden: int = 32
    miscoverage: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 64
    epochs: int = 20
    shared_trunk: bool = True

    def __post_init__(self):
        if not 0.0 < self.miscoverage < 1.0:
            raise ConfigurationError(f"miscoverage must be in (0,1), got {self.miscoverage}")
        if self.kernel_width < 1 or self.window <= self.kernel_width:
            raise ConfigurationError(
                f"need window > kernel_width >= 1, got {self.window}, {self.kernel_width}"
            )
        if min(self.conv_kernels, self.hidden, self.pool, self.batch_size, self.epochs) < 1:
            raise ConfigurationError("conv_kernels, hidden, pool, batch_size, epochs must be >= 1")
        if (self.window - self.kernel_width + 1) // self.pool < 1:
            raise ConfigurationError("pooled length would be zero")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0,1), got {self.dropout}")
        if self.learning_rate <= 0.0:
            raise ConfigurationError("learning_rate must be positive")

    @property
    def alpha_lo(self) -> float:
        return self.miscoverage / 2.0

    @property
    def alpha_hi(self) -> float:
        return 1.0 - self.miscoverage / 2.0


@dataclass
class ForecastOutput:
    y_hat: float
    q_lo: float
    q_hi: float


def _build_network(config: ForecasterConfig, n_features: int, heads: int, rng) -> Network:
    nk, kw, d = config.conv_kernels, config.kernel_width, n_features
    kernels = glorot_uniform(rng, (nk, kw, d), fan_in=kw * d, fan_out=kw * nk)
    conv = Conv1D(kernels, np.zeros(nk))
    pooled = (config.window - kw + 1) // config.pool
    flat = pooled * nk
    dense1 = Dense(
        glorot_uniform(rng, (config.hidden, flat), fan_in=flat, fan_out=config.hidden),
        np.zeros(config.hidden),
    )
    dense2 = Dense(
        glorot_uniform(rng, (heads, config.hidden), fan_in=config.hidden, fan_out=heads),
        np.zeros(heads),
    )
    return Network(
        [conv, ReLU(), MaxPool1D(config.pool), Dropout(config.dropout),
         Flatten(), dense1, ReLU(), dense2]
    )


class ForecasterModel:
    """Trained forecaster: immutable after train(), safe to share."""

    def __init__(self, config: ForecasterConfig, n_features: int, networks: dict,
                 seed: int):
        self.config = config
        self.n_features = int(n_features)
        self.networks = networks          # {"trunk": net} or {"point","lo","hi"}
        self.seed = int(seed)

    @property
    def alpha_lo(self) -> float:
        return self.config.alpha_lo

    @property
    def alpha_hi(self) -> float:
        return self.config.alpha_hi

    @property
    def shared_trunk(self) -> bool:
        return "trunk" in self.networks

    def _check_batch(self, x: np.ndarray):
        expect = (self.config.window, self.n_features)
        if x.ndim != 3 or x.shape[1:] != expect:
            raise UsageError(f"input shape {x.shape[1:]} != model shape {expect}")

    def _heads_batch(self, x: np.ndarray) -> np.ndarray:
        """Raw head outputs [B, 3] (point, lo, hi), dropout off, no swap."""
        self._check_batch(x)
        outs = []
        for lo in range(0, x.shape[0], _PREDICT_CHUNK):
            chunk = x[lo : lo + _PREDICT_CHUNK]
            if self.shared_trunk:
                outs.append(self.networks["trunk"].forward(chunk))
            else:
                outs.append(
                    np.column_stack(
                        [self.networks[k].forward(chunk)[:, 0]
                         for k in ("point", "lo", "hi")]
                    )
                )
        return np.concatenate(outs, axis=0)

    def predict_batch(self, x: np.ndarray) -> tuple:
        """(y_hat, q_lo, q_hi) arrays; crossed quantiles swapped at emission."""
        heads = self._heads_batch(x)
        q_lo = np.minimum(heads[:, 1], heads[:, 2])
        q_hi = np.maximum(heads[:, 1], heads[:, 2])
        return heads[:, 0], q_lo, q_hi

    def predict(self, x) -> ForecastOutput:
        arr = _window_array(x)
        y_hat, q_lo, q_hi = self.predict_batch(arr[None])
        return ForecastOutput(float(y_hat[0]), float(q_lo[0]), float(q_hi[0]))

    def input_gradient_batch(self, x: np.ndarray, y_true: np.ndarray) -> np.ndarray:
        """Per-sample gradient of (point(x) - y_true)^2 with respect to x."""
        self._check_batch(x)
        y = np.asarray(y_true, dtype=np.float64)
        if y.shape != (x.shape[0],):
            raise UsageError(f"y_true shape {y.shape} != ({x.shape[0]},)")
        grads = np.empty_like(x)
        for lo in range(0, x.shape[0], _PREDICT_CHUNK):
            chunk = x[lo : lo + _PREDICT_CHUNK]
            yc = y[lo : lo + chunk.shape[0]]
            if self.shared_trunk:
                net = self.networks["trunk"]
                heads = net.forward(chunk)
                d_heads = np.zeros_like(heads)
                d_heads[:, 0] = 2.0 * (heads[:, 0] - yc)
            else:
                net = self.networks["point"]
                heads = net.forward(chunk)
                d_heads = 2.0 * (heads[:, 0] - yc)[:, None]
            grads[lo : lo + chunk.shape[0]] = net.backward(d_heads)[0].d_input
        return grads

    def input_gradient(self, x, y_true: float) -> Tensor2:
        arr = _window_array(x)
        g = self.input_gradient_batch(arr[None], np.array([float(y_true)]))
        return Tensor2(g[0])

    def activations_batch(self, x: np.ndarray, layers=("post_pool", "hidden")) -> dict:
        """Named flattened activations for the detector, inference mode."""
        self._check_batch(x)
        unknown = set(layers) - set(ACTIVATION_TAPS)
        if unknown:
            raise ConfigurationError(f"unknown activation layers: {sorted(unknown)}")
        taps = {name: ACTIVATION_TAPS[name] for name in layers}
        net = self.networks["trunk"] if self.shared_trunk else self.networks["point"]
        collected = {name: [] for name in layers}
        for lo in range(0, x.shape[0], _PREDICT_CHUNK):
            _, caps = net.forward_taps(x[lo : lo + _PREDICT_CHUNK], taps)
            for name in layers:
                collected[name].append(caps[name])
        return {name: np.concatenate(parts, axis=0) for name, parts in collected.items()}

    def params_sha256(self) -> str:
        h = hashlib.sha256()
        for net_name in sorted(self.networks):
            for i, name, arr in self.networks[net_name].param_items():
                h.update(f"{net_name}.{i}.{name}:{arr.shape}".encode())
                h.update(np.ascontiguousarray(arr).tobytes())
        return h.hexdigest()


def _window_array(x) -> np.ndarray:
    if isinstance(x, WindowSample):
        return x.x.data
    if isinstance(x, Tensor2):
        return x.data
    arr = np.asarray(x, dtype=np.float64)
    if arr.ndim != 2:
        raise UsageError(f"window must be 2-D, got {arr.ndim}-D")
    return arr


def _loss_and_grad(heads: np.ndarray, y: np.ndarray, a_lo: float, a_hi: float) -> tuple:
    """Combined batch-mean loss MSE(point) + pinball(lo) + pinball(hi) and
    its gradient with respect to the heads."""
    n = heads.shape[0]
    resid = heads[:, 0] - y
    loss = (
        float(np.mean(resid**2))
        + float(np.mean(pinball_loss_array(y, heads[:, 1], a_lo)))
        + float(np.mean(pinball_loss_array(y, heads[:, 2], a_hi)))
    )
    d = np.empty_like(heads)
    d[:, 0] = 2.0 * resid / n
    d[:, 1] = pinball_grad_array(y, heads[:, 1], a_lo) / n
    d[:, 2] = pinball_grad_array(y, heads[:, 2], a_hi) / n
    return loss, d


def _sgd_step(net: Network, grads, lr: float):
    for layer, lg in zip(net.layers, grads):
        for name in layer.params:
            layer.params[name] -= lr * lg.d_params[name]


def train(samples, config: ForecasterConfig, seed: int) -> ForecasterModel:
    """Deterministic mini-batch gradient descent on the combined loss."""
    if len(samples) < MIN_TRAIN_SAMPLES:
        raise EmptyDataError(
            f"training needs >= {MIN_TRAIN_SAMPLES} samples, got {len(samples)}"
        )
    x, y, _ = stack_windows(samples)
    if x.shape[1] != config.window:
        raise ConfigurationError(
            f"sample window {x.shape[1]} != config.window {config.window}"
        )
    n, _, d = x.shape
    ss = np.random.SeedSequence(seed)
    init_rng, shuffle_rng, dropout_rng = map(np.random.default_rng, ss.spawn(3))

    if config.shared_trunk:
        networks = {"trunk": _build_network(config, d, 3, init_rng)}
    else:
        networks = {
            name: _build_network(config, d, 1, init_rng)
            for name in ("point", "lo", "hi")
        }
    a_lo, a_hi = config.alpha_lo, config.alpha_hi

    # divergence surfaces as a clean TrainingError below, so transient
    # overflow in the float pipeline is expected noise, not a signal
    with np.errstate(over="ignore", invalid="ignore"):
        for epoch in range(config.epochs):
            order = shuffle_rng.permutation(n)
            epoch_loss = 0.0
            for lo in range(0, n, config.batch_size):
                idx = order[lo : lo + config.batch_size]
                xb, yb = x[idx], y[idx]
                if config.shared_trunk:
                    net = networks["trunk"]
                    heads = net.forward(xb, training=True, rng=dropout_rng)
                    loss, d_heads = _loss_and_grad(heads, yb, a_lo, a_hi)
                    _sgd_step(net, net.backward(d_heads), config.learning_rate)
                else:
                    loss = 0.0
                    for name, grad_fn in (
                        ("point", lambda h: 2.0 * (h[:, 0] - yb)[:, None] / len(yb)),
                        ("lo", lambda h: pinball_grad_array(yb, h[:, 0], a_lo)[:, None] / len(yb)),
                        ("hi", lambda h: pinball_grad_array(yb, h[:, 0], a_hi)[:, None] / len(yb)),
                    ):
                        net = networks[name]
                        h = net.forward(xb, training=True, rng=dropout_rng)
                        if name == "point":
                            loss += float(np.mean((h[:, 0] - yb) ** 2))
                        else:
                            tau = a_lo if name == "lo" else a_hi
                            loss += float(np.mean(pinball_loss_array(yb, h[:, 0], tau)))
                        _sgd_step(net, net.backward(grad_fn(h)), config.learning_rate)
                epoch_loss += loss * len(idx)
            if not np.isfinite(epoch_loss):
                raise TrainingError(f"training diverged (non-finite loss) at epoch {epoch}")
    return ForecasterModel(config, d, networks, seed)


MODEL_FORMAT_VERSION = 1


def config_sha256(config: ForecasterConfig) -> str:
    payload = json.dumps(dataclasses.asdict(config), sort_keys=True)
    return hashlib.sha256(payload.encode()).hexdigest()


def save_model(model: ForecasterModel, out_dir) -> None:
    """Flat parameter archive (params.npz) plus a text manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    arrays = {}
    for net_name in sorted(model.networks):
        for i, name, arr in model.networks[net_name].param_items():
            arrays[f"{net_name}.{i}.{name}"] = arr
    np.savez(out / "params.npz", **arrays)
    manifest = {
        "version": MODEL_FORMAT_VERSION,
        "seed": model.seed,
        "n_features": model.n_features,
        "config": dataclasses.asdict(model.config),
        "config_sha256": config_sha256(model.config),
        "params_sha256": model.params_sha256(),
        "alpha_lo": model.alpha_lo,
        "alpha_hi": model.alpha_hi,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_model(model_dir) -> ForecasterModel:
    path = Path(model_dir)
    try:
        manifest = json.loads((path / "manifest.json").read_text())
    except json.JSONDecodeError as exc:
        raise FormatError(f"unreadable model manifest: {exc}") from exc
    if manifest.get("version") != MODEL_FORMAT_VERSION:
        raise FormatError(f"unsupported model version {manifest.get('version')}")
    config = ForecasterConfig(**manifest["config"])
    n_features = int(manifest["n_features"])
    rng = np.random.default_rng(0)
    if config.shared_trunk:
        networks = {"trunk": _build_network(config, n_features, 3, rng)}
    else:
        networks = {
            name: _build_network(config, n_features, 1, rng)
            for name in ("point", "lo", "hi")
        }
    with np.load(path / "params.npz") as archive:
        for net_name, net in networks.items():
            for i, layer in enumerate(net.layers):
                for name in layer.params:
                    key = f"{net_name}.{i}.{name}"
                    if key not in archive:
                        raise FormatError(f"model archive missing {key}")
                    stored = archive[key]
                    if stored.shape != layer.params[name].shape:
                        raise FormatError(f"shape mismatch for {key}")
                    layer.params[name] = stored.astype(np.float64)
    model = ForecasterModel(config, n_features, networks, manifest["seed"])
    if model.params_sha256() != manifest["params_sha256"]:
        raise FormatError("model parameter hash mismatch")
    return model
