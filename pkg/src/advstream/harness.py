"""Experiment orchestration: stream replay, attack campaigns, metrics, reports.

A run fills the rolling buffer, trains the forecaster on the first 75% of
it, calibrates the conformal correction on the rest, then replays the
remaining stream one step at a time: predict, conformalize, update the
trigger, attack when the mode says so, record.  Everything is determined
by one master seed.  Reports and plot files are plain text with
deterministic float formatting so identical runs are byte-identical.
"""

from __future__ import annotations

import dataclasses
import hashlib
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from . import attacks as attacks_mod
from . import conformal as conformal_mod
from . import detector as detector_mod
from . import forecaster as forecaster_mod
from . import ingest as ingest_mod
from . import trigger as trigger_mod
from .buffer import RollingBuffer, make_windows, stack_windows
from .errors import (
    ConfigurationError,
    DataSizeError,
    EmptyDataError,
    UsageError,
)

MODES = ("selective", "baseline-every-step", "baseline-rate-matched", "clean")
SOURCES = ("synth", "household")
MIN_STREAM_STEPS = 1000
_SCORE_CHUNK = 16384

# seed-fanout tags so each consumer of the master seed gets an independent
# deterministic stream
_TAG_RATE_SAMPLER = 101
_TAG_DETECTOR = 202

# Published household-benchmark results (selective vs non-selective attacker):
# (rmse_adv selective, rmse_adv baseline, F1 selective, F1 baseline) per
# (kind, epsilon).  Printed in comparison reports for context, never asserted.
REFERENCE_HOUSEHOLD = {
    ("fgsm", 0.05): (0.253, 0.117, 0.165, 0.369),
    ("fgsm", 0.10): (0.288, 0.174, 0.215, 0.338),
    ("fgsm", 0.15): (0.297, 0.237, 0.172, 0.274),
    ("bim", 0.05): (0.280, 0.129, 0.248, 0.434),
    ("bim", 0.10): (0.289, 0.203, 0.217, 0.407),
    ("bim", 0.15): (0.310, 0.287, 0.209, 0.556),
    ("nifgsm", 0.05): (0.295, 0.262, 0.018, 0.581),
    ("nifgsm", 0.10): (0.353, 0.306, 0.036, 0.591),
    ("nifgsm", 0.15): (0.393, 0.348, 0.101, 0.596),
}


@dataclass(frozen=True)
class ExperimentConfig:
    source: str = "synth"
    data_path: str | None = None
    synth_n: int = 100_000
    n_features: int = 7
    capacity: int = 43_200
    window: int = 60
    miscoverage: float = 0.10
    attack_rate: float = 0.10
    threshold_window: int = 1_440
    warmup: int | None = None            # defaults to threshold_window
    kind: str = "fgsm"
    epsilon: float = 0.10
    iterations: int = 10
    step: float | None = None
    momentum: float = 1.0
    scope: str = "window"
    mode: str = "selective"
    stream_steps: int = 50_000
    seed: int = 0
    seeds: tuple = (0, 1, 2)             # compare grid
    kinds: tuple = ("fgsm", "bim", "nifgsm")
    epsilons: tuple = (0.05, 0.10, 0.15)
    every_step_cells: tuple = ()         # ((kind, eps), ...) extra baseline cells
    every_step_cap: int = 10_000
    persist_poison: bool = False
    keep_perturbations: bool = False
    epochs: int = 20
    learning_rate: float = 1e-3
    batch_size: int = 64
    shared_trunk: bool = True
    lid_k: int = 20
    lid_batch: int = 100
    lid_layers: tuple = ("post_pool", "hidden")
    detector_train: int = 800            # windows per class when fitting
    with_detector: bool = False
    output_dir: str | None = None

    def __post_init__(self):
        def as_tuple(v):
            if isinstance(v, (tuple, list)):
                return tuple(v)
            return (v,)

        object.__setattr__(self, "seeds", tuple(int(s) for s in as_tuple(self.seeds)))
        object.__setattr__(self, "kinds", as_tuple(self.kinds))
        object.__setattr__(
            self, "epsilons", tuple(float(e) for e in as_tuple(self.epsilons))
        )
        object.__setattr__(self, "lid_layers", as_tuple(self.lid_layers))
        cells = []
        for item in as_tuple(self.every_step_cells) if self.every_step_cells else ():
            if isinstance(item, str):
                kind, _, eps = item.partition(":")
                cells.append((kind, float(eps)))
            else:
                kind, eps = item
                cells.append((str(kind), float(eps)))
        object.__setattr__(self, "every_step_cells", tuple(cells))
        if self.source not in SOURCES:
            raise ConfigurationError(f"source must be one of {SOURCES}, got {self.source!r}")
        if self.mode not in MODES:
            raise ConfigurationError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.source == "household":
            if not self.data_path:
                raise ConfigurationError("household source requires data_path")
            if not Path(self.data_path).exists():
                raise ConfigurationError(f"data_path does not exist: {self.data_path}")
        for name in ("miscoverage", "attack_rate"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ConfigurationError(f"{name} must be in (0,1), got {v}")
        if self.capacity < 4:
            raise ConfigurationError("capacity must be >= 4")
        if self.threshold_window < 1:
            raise ConfigurationError("threshold_window must be >= 1")
        if self.stream_steps < 1:
            raise ConfigurationError("stream_steps must be >= 1")
        if self.kind not in attacks_mod.KINDS:
            raise ConfigurationError(f"kind must be one of {attacks_mod.KINDS}")
        for k in self.kinds:
            if k not in attacks_mod.KINDS:
                raise ConfigurationError(f"unknown attack kind in grid: {k!r}")
        if self.every_step_cap < MIN_STREAM_STEPS:
            raise ConfigurationError(
                f"every_step_cap must be >= {MIN_STREAM_STEPS}"
            )

    @property
    def effective_warmup(self) -> int:
        return self.threshold_window if self.warmup is None else self.warmup

    def forecaster_config(self) -> forecaster_mod.ForecasterConfig:
        return forecaster_mod.ForecasterConfig(
            window=self.window,
            miscoverage=self.miscoverage,
            learning_rate=self.learning_rate,
            batch_size=self.batch_size,
            epochs=self.epochs,
            shared_trunk=self.shared_trunk,
        )

    def attack_config(self) -> attacks_mod.AttackConfig:
        return attacks_mod.AttackConfig(
            kind=self.kind,
            epsilon=self.epsilon,
            iterations=self.iterations,
            step=self.step,
            momentum=self.momentum,
            scope=self.scope,
        )

    def lid_config(self) -> detector_mod.LidConfig:
        return detector_mod.LidConfig(
            k=self.lid_k, batch=self.lid_batch, layers=self.lid_layers
        )


@dataclass
class StepRecord:
    t: int                      # stream row index of the newest observed row
    y_true: float
    y_hat_clean: float
    y_hat_adv: float | None     # present iff attacked
    lo: float
    hi: float
    width: float
    threshold: float
    attacked: bool
    detector_score: float | None = None
    detector_flag: bool | None = None


@dataclass
class MetricsReport:
    mode: str
    kind: str
    epsilon: float
    seed: int
    total_steps: int
    warmup_steps: int
    attack_count: int
    attack_errors: int
    realized_rate: float | None
    rmse_clean: float
    rmse_adv: float | None
    rmse_baseline_comparable: float | None
    precision: float | None
    recall: float | None
    f1: float | None
    max_linf: float | None
    bound_violations: int
    oob_cells: int
    hashes: dict
    config_echo: dict


@dataclass
class RunResult:
    records: list
    report: MetricsReport
    perturbations: list = field(default_factory=list)


@dataclass
class Prepared:
    """Model + calibrator + frozen normalization, reusable across modes."""

    model: forecaster_mod.ForecasterModel
    calibrator: conformal_mod.ConformalCalibrator
    norm_min: np.ndarray
    norm_max: np.ndarray
    target_index: int
    ref_windows: np.ndarray      # clean train-segment windows for LID reference
    calib_x: np.ndarray          # calibration windows (detector training pool)
    calib_y: np.ndarray

    def normalize(self, rows: np.ndarray) -> np.ndarray:
        span = self.norm_max - self.norm_min
        rows = np.asarray(rows, dtype=np.float64)
        out = np.zeros_like(rows)
        np.divide(rows - self.norm_min, span, out=out, where=span > 0.0)
        return out


@dataclass
class StreamDetector:
    """A fitted LID detector bound to its featurizer."""

    featurizer: detector_mod.LidFeaturizer
    model: detector_mod.DetectorModel

    def score_windows(self, windows: np.ndarray) -> np.ndarray:
        out = np.empty(windows.shape[0])
        for lo in range(0, windows.shape[0], _SCORE_CHUNK):
            chunk = windows[lo : lo + _SCORE_CHUNK]
            feats = self.featurizer.featurize_batch(chunk)
            out[lo : lo + chunk.shape[0]] = self.model.score(feats)
        return out


def build_frame(config: ExperimentConfig) -> ingest_mod.TimeSeriesFrame:
    if config.source == "synth":
        return ingest_mod.synth_stream(
            seed=config.seed, n=config.synth_n, d=config.n_features
        )
    return ingest_mod.load_household_csv(config.data_path)


def prepare(config: ExperimentConfig, frame: ingest_mod.TimeSeriesFrame) -> Prepared:
    """Fill the buffer, train on the 75% segment, calibrate on the rest."""
    if frame.n_rows < config.capacity:
        raise DataSizeError(
            f"{frame.n_rows} rows cannot fill a buffer of {config.capacity}"
        )
    buf = RollingBuffer(config.capacity, frame.n_features)
    for i in range(config.capacity):
        buf.push(frame.features[i])
    train_seg, calib_seg = buf.split_initial(frame.target_index)
    train_windows = make_windows(train_seg, config.window)
    model = forecaster_mod.train(train_windows, config.forecaster_config(), config.seed)
    calib_windows = make_windows(calib_seg, config.window)
    calibrator = conformal_mod.calibrate(model, calib_windows, config.miscoverage)

    train_x, _, _ = stack_windows(train_windows)
    calib_x, calib_y, _ = stack_windows(calib_windows)
    return Prepared(
        model=model,
        calibrator=calibrator,
        norm_min=buf.norm_min.copy(),
        norm_max=buf.norm_max.copy(),
        target_index=frame.target_index,
        ref_windows=train_x[-config.lid_batch :].copy(),
        calib_x=calib_x,
        calib_y=calib_y,
    )


def _rate_matched_plan(config: ExperimentConfig, warmup: int, total: int,
                       count: int | None) -> np.ndarray:
    """Uniformly random post-warmup attack steps at the matched count."""
    eligible = np.arange(warmup, total)
    if count is None:
        count = int(round(config.attack_rate * eligible.size))
    count = min(count, eligible.size)
    rng = np.random.default_rng(
        np.random.SeedSequence([_TAG_RATE_SAMPLER, int(config.seed)])
    )
    fired = np.zeros(total, dtype=bool)
    if count > 0:
        fired[rng.choice(eligible, size=count, replace=False)] = True
    return fired


def _stream_length(config: ExperimentConfig, frame, stream_cap: int | None) -> int:
    s = min(config.stream_steps, frame.n_rows - config.capacity - 1)
    if stream_cap is not None:
        s = min(s, stream_cap)
    if s < MIN_STREAM_STEPS:
        raise DataSizeError(
            f"need at least {MIN_STREAM_STEPS} streamed steps after the buffer; "
            f"got {s} (rows={frame.n_rows}, capacity={config.capacity})"
        )
    return s


def _trigger_pass(config: ExperimentConfig, widths: np.ndarray) -> tuple:
    state = trigger_mod.ThresholdState(
        config.threshold_window, config.attack_rate, config.effective_warmup
    )
    thresholds = np.empty(widths.size)
    fired = np.zeros(widths.size, dtype=bool)
    for s in range(widths.size):
        thresholds[s] = trigger_mod.update_threshold(state, widths[s])
        fired[s] = trigger_mod.should_attack(state, widths[s])
    return thresholds, fired


def _fired_for_mode(config: ExperimentConfig, trig_fired: np.ndarray,
                    warmup: int, total: int, attack_plan: int | None) -> np.ndarray:
    if config.mode == "clean":
        return np.zeros(total, dtype=bool)
    if config.mode == "selective":
        return trig_fired.copy()
    if config.mode == "baseline-every-step":
        fired = np.zeros(total, dtype=bool)
        fired[warmup:] = True
        return fired
    return _rate_matched_plan(config, warmup, total, attack_plan)


def _stream_core_fast(config, frame, prepared, attack_plan, stream_cap):
    cap, w = config.capacity, config.window
    total = _stream_length(config, frame, stream_cap)
    warmup = config.effective_warmup

    rows_norm = prepared.normalize(frame.features[: cap + total + 1])
    windows = sliding_window_view(rows_norm, w, axis=0).transpose(0, 2, 1)
    x = np.array(windows[cap - w + 1 : cap - w + 1 + total], dtype=np.float64)
    oob_cells = int(((x < 0.0) | (x > 1.0)).sum())
    np.clip(x, 0.0, 1.0, out=x)
    y_true = rows_norm[cap + 1 : cap + 1 + total, prepared.target_index].copy()

    y_hat, q_lo, q_hi = prepared.model.predict_batch(x)
    lo, hi = conformal_mod.interval_arrays(prepared.calibrator, q_lo, q_hi)
    width = hi - lo
    thresholds, trig_fired = _trigger_pass(config, width)
    fired = _fired_for_mode(config, trig_fired, warmup, total, attack_plan)

    attack_errors = 0
    y_hat_adv = np.full(total, np.nan)
    linf = np.full(total, np.nan)
    x_clean_fired = x_adv_fired = None
    fired_idx = np.flatnonzero(fired)
    if fired_idx.size:
        acfg = config.attack_config()
        adv, failed = attacks_mod.attack_batch(
            prepared.model, x[fired_idx], y_true[fired_idx], acfg
        )
        attack_errors = int(failed.sum())
        if attack_errors:
            fired[fired_idx[failed]] = False
            adv = adv[~failed]
            fired_idx = fired_idx[~failed]
        if fired_idx.size:
            x_clean_fired = x[fired_idx].copy()
            x_adv_fired = adv
            linf[fired_idx] = np.abs(adv - x_clean_fired).max(axis=(1, 2))
            adv_pred, _, _ = prepared.model.predict_batch(adv)
            y_hat_adv[fired_idx] = adv_pred
            x[fired_idx] = adv      # x becomes the per-step model input

    return {
        "total": total,
        "warmup": warmup,
        "y_true": y_true,
        "y_hat": y_hat,
        "lo": lo,
        "hi": hi,
        "width": width,
        "thresholds": thresholds,
        "fired": fired,
        "fired_idx": fired_idx,
        "attack_errors": attack_errors,
        "y_hat_adv": y_hat_adv,
        "linf": linf,
        "x_clean_fired": x_clean_fired,
        "x_adv_fired": x_adv_fired,
        "x_scored": x,
        "oob_cells": oob_cells,
        "stream_rows": cap + total + 1,
    }


def _stream_core_sequential(config, frame, prepared, attack_plan, stream_cap):
    """Step-at-a-time replay through a live RollingBuffer.  Matches the fast
    path when persist_poison is off; with it on, adversarial windows are
    written back into the buffer (denormalized) and poison later inputs."""
    cap, w = config.capacity, config.window
    total = _stream_length(config, frame, stream_cap)
    warmup = config.effective_warmup
    acfg = config.attack_config()

    buf = RollingBuffer(cap, frame.n_features)
    for i in range(cap):
        buf.push(frame.features[i])
    state = trigger_mod.ThresholdState(
        config.threshold_window, config.attack_rate, warmup
    )
    plan = None
    if config.mode == "baseline-rate-matched":
        plan = _rate_matched_plan(config, warmup, total, attack_plan)

    y_true = np.empty(total)
    y_hat = np.empty(total)
    lo = np.empty(total)
    hi = np.empty(total)
    width = np.empty(total)
    thresholds = np.empty(total)
    fired = np.zeros(total, dtype=bool)
    y_hat_adv = np.full(total, np.nan)
    linf = np.full(total, np.nan)
    x_scored = np.empty((total, w, frame.n_features))
    clean_fired, adv_fired = [], []
    attack_errors = 0
    oob_cells = 0

    for s in range(total):
        buf.push(frame.features[cap + s])
        tail = buf.as_array()[-w:]
        x_norm = buf.normalize(tail)
        oob_cells += int(((x_norm < 0.0) | (x_norm > 1.0)).sum())
        x_s = np.clip(x_norm, 0.0, 1.0)
        y_s = float(
            buf.normalize(frame.features[cap + s + 1])[prepared.target_index]
        )
        p, ql, qh = prepared.model.predict_batch(x_s[None])
        rec = conformal_mod.conformal_interval(
            prepared.calibrator, float(ql[0]), float(qh[0])
        )
        thresholds[s] = trigger_mod.update_threshold(state, rec.width)
        if config.mode == "clean":
            want = False
        elif config.mode == "selective":
            want = trigger_mod.should_attack(state, rec.width)
        elif config.mode == "baseline-every-step":
            want = s >= warmup
        else:
            want = bool(plan[s])

        y_true[s], y_hat[s] = y_s, float(p[0])
        lo[s], hi[s], width[s] = rec.lo, rec.hi, rec.width
        x_scored[s] = x_s
        if want:
            adv, failed = attacks_mod.attack_batch(
                prepared.model, x_s[None], [y_s], acfg
            )
            if failed[0]:
                attack_errors += 1
            else:
                fired[s] = True
                adv0 = adv[0]
                linf[s] = float(np.abs(adv0 - x_s).max())
                y_hat_adv[s] = float(prepared.model.predict_batch(adv0[None])[0][0])
                clean_fired.append(x_s)
                adv_fired.append(adv0)
                x_scored[s] = adv0
                if config.persist_poison:
                    buf.replace_tail(buf.denormalize(adv0))

    fired_idx = np.flatnonzero(fired)
    return {
        "total": total,
        "warmup": warmup,
        "y_true": y_true,
        "y_hat": y_hat,
        "lo": lo,
        "hi": hi,
        "width": width,
        "thresholds": thresholds,
        "fired": fired,
        "fired_idx": fired_idx,
        "attack_errors": attack_errors,
        "y_hat_adv": y_hat_adv,
        "linf": linf,
        "x_clean_fired": np.array(clean_fired) if clean_fired else None,
        "x_adv_fired": np.array(adv_fired) if adv_fired else None,
        "x_scored": x_scored,
        "oob_cells": oob_cells,
        "stream_rows": cap + total + 1,
    }


def _rmse(err: np.ndarray) -> float:
    return float(np.sqrt(np.mean(np.square(err))))


def _stream_sha256(frame, n_rows: int) -> str:
    h = hashlib.sha256()
    h.update(np.ascontiguousarray(frame.features[:n_rows]).tobytes())
    return h.hexdigest()


def config_echo(config: ExperimentConfig) -> dict:
    echo = dataclasses.asdict(config)
    echo.pop("output_dir", None)
    return echo


def run_stream(
    config: ExperimentConfig,
    frame: ingest_mod.TimeSeriesFrame | None = None,
    prepared: Prepared | None = None,
    detector: StreamDetector | None = None,
    attack_plan: int | None = None,
    stream_cap: int | None = None,
) -> RunResult:
    """One full streaming run in the configured mode.

    `attack_plan` pins the rate-matched baseline to an exact attack count
    (the paired selective run's realized count).  `stream_cap` shortens the
    stream below config.stream_steps (used for capped every-step runs).
    """
    if frame is None:
        frame = build_frame(config)
    if prepared is None:
        prepared = prepare(config, frame)
    if detector is None and config.with_detector:
        detector = fit_stream_detector(config, prepared)

    core = (
        _stream_core_sequential(config, frame, prepared, attack_plan, stream_cap)
        if config.persist_poison
        else _stream_core_fast(config, frame, prepared, attack_plan, stream_cap)
    )

    total, warmup = core["total"], core["warmup"]
    fired, fired_idx = core["fired"], core["fired_idx"]
    scores = flags = None
    if detector is not None:
        scores = detector.score_windows(core["x_scored"])
        flags = scores >= detector.model.threshold

    records = []
    y_true, y_hat = core["y_true"], core["y_hat"]
    lo, hi, width = core["lo"], core["hi"], core["width"]
    thresholds, y_hat_adv = core["thresholds"], core["y_hat_adv"]
    for s in range(total):
        records.append(
            StepRecord(
                t=config.capacity + s,
                y_true=float(y_true[s]),
                y_hat_clean=float(y_hat[s]),
                y_hat_adv=float(y_hat_adv[s]) if fired[s] else None,
                lo=float(lo[s]),
                hi=float(hi[s]),
                width=float(width[s]),
                threshold=float(thresholds[s]),
                attacked=bool(fired[s]),
                detector_score=float(scores[s]) if scores is not None else None,
                detector_flag=bool(flags[s]) if flags is not None else None,
            )
        )

    attack_count = int(fired.sum())
    linf_fired = core["linf"][fired_idx] if fired_idx.size else np.array([])
    violations = 0
    max_linf = None
    if fired_idx.size:
        violations += int((linf_fired > config.epsilon + attacks_mod.LINF_TOL).sum())
        adv = core["x_adv_fired"]
        violations += int(((adv < 0.0) | (adv > 1.0)).any(axis=(1, 2)).sum())
        max_linf = float(linf_fired.max())

    precision = recall = f1 = None
    if detector is not None and total > warmup:
        precision, recall, f1 = detector_mod.classification_metrics(
            fired[warmup:], flags[warmup:]
        )

    rmse_adv_val = rmse_base = None
    if attack_count:
        rmse_adv_val = _rmse(y_true[fired] - y_hat_adv[fired])
        rmse_base = _rmse(y_true[fired] - y_hat[fired])

    report = MetricsReport(
        mode=config.mode,
        kind=config.kind,
        epsilon=config.epsilon,
        seed=config.seed,
        total_steps=total,
        warmup_steps=warmup,
        attack_count=attack_count,
        attack_errors=core["attack_errors"],
        realized_rate=(attack_count / (total - warmup)) if total > warmup else None,
        rmse_clean=_rmse(y_true - y_hat),
        rmse_adv=rmse_adv_val,
        rmse_baseline_comparable=rmse_base,
        precision=precision,
        recall=recall,
        f1=f1,
        max_linf=max_linf,
        bound_violations=violations,
        oob_cells=core["oob_cells"],
        hashes={
            "model_params": prepared.model.params_sha256(),
            "calibrator": prepared.calibrator.sha256(),
            "stream": _stream_sha256(frame, core["stream_rows"]),
        },
        config_echo=config_echo(config),
    )

    perturbations = []
    if config.keep_perturbations and fired_idx.size:
        from .numerics import Tensor2

        clean_f, adv_f = core["x_clean_fired"], core["x_adv_fired"]
        for j, s in enumerate(fired_idx):
            perturbations.append(
                attacks_mod.PerturbationRecord(
                    t=config.capacity + int(s),
                    x_clean=Tensor2(clean_f[j]),
                    x_adv=Tensor2(adv_f[j]),
                    linf=float(linf_fired[j]),
                    kind=config.kind,
                    epsilon=config.epsilon,
                )
            )
    return RunResult(records=records, report=report, perturbations=perturbations)


def rmse_adv(records) -> float | None:
    """Eq.-style attacked-subset RMSE; None (absent) when nothing was attacked."""
    errs = []
    for r in records:
        if r.attacked:
            if r.y_hat_adv is None:
                raise UsageError(f"attacked record t={r.t} lacks y_hat_adv")
            errs.append(r.y_true - r.y_hat_adv)
    if not errs:
        return None
    return _rmse(np.asarray(errs))


def detector_pools(config: ExperimentConfig, prepared: Prepared) -> tuple:
    """(clean, adversarial) window pools for detector fitting: evenly spaced
    calibration-segment windows and their attacked copies."""
    pool = prepared.calib_x.shape[0]
    n_take = min(config.detector_train, pool)
    idx = np.unique(np.linspace(0, pool - 1, n_take).astype(int))
    clean = prepared.calib_x[idx]
    y = prepared.calib_y[idx]
    adv, failed = attacks_mod.attack_batch(
        prepared.model, clean, y, config.attack_config()
    )
    if failed.any():
        adv = adv[~failed]
    return clean, adv


def fit_stream_detector(config: ExperimentConfig, prepared: Prepared) -> StreamDetector:
    """Fit the LID detector on baseline (every-window) perturbations of the
    calibration segment, held out from both training and the stream."""
    lid_cfg = config.lid_config()
    if prepared.ref_windows.shape[0] < lid_cfg.batch:
        raise ConfigurationError(
            f"need {lid_cfg.batch} reference windows, got {prepared.ref_windows.shape[0]}"
        )
    featurizer = detector_mod.LidFeaturizer(prepared.model, lid_cfg)
    featurizer.register_reference(prepared.ref_windows)
    clean, adv = detector_pools(config, prepared)
    det_seed = int(
        np.random.SeedSequence([_TAG_DETECTOR, int(config.seed)]).generate_state(1)[0]
    )
    model = detector_mod.fit_detector(featurizer, clean, adv, det_seed)
    return StreamDetector(featurizer=featurizer, model=model)


def _fmt(v) -> str:
    if v is None:
        return "absent"
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (tuple, list)):
        return "[" + ", ".join(_fmt(item) for item in v) + "]"
    return str(v)


def render_report(report: MetricsReport) -> str:
    lines = ["run report", "=" * 10, "", "[config]"]
    for key in sorted(report.config_echo):
        lines.append(f"{key} = {_fmt(report.config_echo[key])}")
    lines.append("")
    lines.append("[hashes]")
    for key in sorted(report.hashes):
        lines.append(f"{key} = {report.hashes[key]}")
    lines.append("")
    lines.append("[metrics]")
    for key in (
        "mode", "kind", "epsilon", "seed", "total_steps", "warmup_steps",
        "attack_count", "attack_errors", "realized_rate", "rmse_clean",
        "rmse_adv", "rmse_baseline_comparable", "precision", "recall", "f1",
        "max_linf", "bound_violations", "oob_cells",
    ):
        lines.append(f"{key} = {_fmt(getattr(report, key))}")
    lines.append("")
    return "\n".join(lines)


def emit_plots(records, out_dir, prefix: str = "") -> list:
    """Write the width/threshold/attack-mark series and the clean-vs-adv
    forecast overlay as columnar text files with one-line schema headers."""
    if not records:
        raise EmptyDataError("no records to plot")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    width_path = out / f"{prefix}width_threshold.txt"
    overlay_path = out / f"{prefix}forecast_overlay.txt"

    lines = ["# t width threshold attacked"]
    for r in records:
        lines.append(f"{r.t} {r.width!r} {r.threshold!r} {int(r.attacked)}")
    width_path.write_text("\n".join(lines) + "\n")

    lines = ["# t y_true y_hat_clean y_hat_adv attacked"]
    for r in records:
        adv = repr(r.y_hat_adv) if r.y_hat_adv is not None else "nan"
        lines.append(
            f"{r.t} {r.y_true!r} {r.y_hat_clean!r} {adv} {int(r.attacked)}"
        )
    overlay_path.write_text("\n".join(lines) + "\n")
    return [width_path, overlay_path]


@dataclass
class CellResult:
    kind: str
    epsilon: float
    rmse_adv_selective: list
    rmse_adv_rate_matched: list
    f1_selective: list
    f1_rate_matched: list
    attack_counts: list
    realized_rates: list
    rmse_clean: list
    f1_every_step: list = field(default_factory=list)
    f1_selective_capped: list = field(default_factory=list)
    rmse_adv_every_step: list = field(default_factory=list)

    @property
    def mean_rmse_selective(self) -> float:
        return float(np.mean(self.rmse_adv_selective))

    @property
    def mean_rmse_rate_matched(self) -> float:
        return float(np.mean(self.rmse_adv_rate_matched))

    @property
    def ratio(self) -> float:
        return self.mean_rmse_selective / self.mean_rmse_rate_matched


@dataclass
class ComparisonReport:
    seeds: tuple
    cells: list
    hashes_per_seed: dict
    config_echo: dict

    @property
    def mean_ratio(self) -> float:
        return float(np.mean([c.ratio for c in self.cells]))

    def cell(self, kind: str, epsilon: float) -> CellResult:
        for c in self.cells:
            if c.kind == kind and abs(c.epsilon - epsilon) < 1e-12:
                return c
        raise UsageError(f"no cell ({kind}, {epsilon}) in comparison")


def _f1_capped(records, warmup: int, cap: int) -> float:
    part = records[:cap]
    truth = [r.attacked for r in part[warmup:]]
    flags = [bool(r.detector_flag) for r in part[warmup:]]
    return detector_mod.classification_metrics(truth, flags)[2]


def compare_modes(config: ExperimentConfig) -> ComparisonReport:
    """Selective vs rate-matched baseline (and optional capped every-step
    baseline) over the (kind, epsilon) grid, sharing the trained model,
    calibrator, and stream within each seed."""
    cells = {
        (kind, eps): CellResult(kind, eps, [], [], [], [], [], [], [])
        for kind in config.kinds
        for eps in config.epsilons
    }
    hashes_per_seed = {}
    out_dir = Path(config.output_dir) if config.output_dir else None

    for seed in config.seeds:
        base = replace(config, seed=seed)
        frame = build_frame(base)
        prepared = prepare(base, frame)
        seed_steps = _stream_length(base, frame, None)
        hashes_per_seed[seed] = {
            "model_params": prepared.model.params_sha256(),
            "calibrator": prepared.calibrator.sha256(),
            "stream": _stream_sha256(frame, base.capacity + seed_steps + 1),
        }
        for kind in config.kinds:
            for eps in config.epsilons:
                cell_cfg = replace(base, kind=kind, epsilon=eps)
                det = fit_stream_detector(cell_cfg, prepared)
                sel = run_stream(
                    replace(cell_cfg, mode="selective"), frame, prepared, det
                )
                rm = run_stream(
                    replace(cell_cfg, mode="baseline-rate-matched"),
                    frame,
                    prepared,
                    det,
                    attack_plan=sel.report.attack_count,
                )
                cell = cells[(kind, eps)]
                cell.rmse_adv_selective.append(sel.report.rmse_adv)
                cell.rmse_adv_rate_matched.append(rm.report.rmse_adv)
                cell.f1_selective.append(sel.report.f1)
                cell.f1_rate_matched.append(rm.report.f1)
                cell.attack_counts.append(sel.report.attack_count)
                cell.realized_rates.append(sel.report.realized_rate)
                cell.rmse_clean.append(sel.report.rmse_clean)
                if (kind, eps) in config.every_step_cells:
                    es = run_stream(
                        replace(cell_cfg, mode="baseline-every-step"),
                        frame,
                        prepared,
                        det,
                        stream_cap=config.every_step_cap,
                    )
                    cell.f1_every_step.append(es.report.f1)
                    cell.rmse_adv_every_step.append(es.report.rmse_adv)
                    cell.f1_selective_capped.append(
                        _f1_capped(
                            sel.records,
                            config.effective_warmup,
                            es.report.total_steps,
                        )
                    )
                if out_dir is not None:
                    emit_plots(
                        sel.records,
                        out_dir / "plots",
                        prefix=f"{kind}_eps{eps:g}_seed{seed}_",
                    )

    report = ComparisonReport(
        seeds=config.seeds,
        cells=[cells[(k, e)] for k in config.kinds for e in config.epsilons],
        hashes_per_seed=hashes_per_seed,
        config_echo=config_echo(config),
    )
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "compare.txt").write_text(render_comparison(report))
    return report


def render_comparison(report: ComparisonReport) -> str:
    lines = ["mode comparison", "=" * 15, "", "[config]"]
    for key in sorted(report.config_echo):
        lines.append(f"{key} = {_fmt(report.config_echo[key])}")
    lines.append("")
    lines.append("[hashes]")
    for seed in sorted(report.hashes_per_seed):
        for key, val in sorted(report.hashes_per_seed[seed].items()):
            lines.append(f"seed{seed}.{key} = {val}")
    lines.append("")
    lines.append("[cells]  (seed-mean values; ratio = selective / rate-matched)")
    header = (
        "kind epsilon rmse_adv_selective rmse_adv_rate_matched ratio "
        "f1_selective f1_rate_matched realized_rate"
    )
    lines.append(header)
    for c in report.cells:
        lines.append(
            " ".join(
                [
                    c.kind,
                    _fmt(c.epsilon),
                    _fmt(c.mean_rmse_selective),
                    _fmt(c.mean_rmse_rate_matched),
                    _fmt(c.ratio),
                    _fmt(float(np.mean(c.f1_selective))),
                    _fmt(float(np.mean(c.f1_rate_matched))),
                    _fmt(float(np.mean(c.realized_rates))),
                ]
            )
        )
    lines.append("")
    lines.append(f"mean_ratio = {_fmt(report.mean_ratio)}")
    lines.append("")

    capped = [c for c in report.cells if c.f1_every_step]
    if capped:
        lines.append("[every-step baseline]  (capped stream prefix; seed means)")
        lines.append("kind epsilon f1_every_step f1_selective_same_prefix rmse_adv_every_step")
        for c in capped:
            lines.append(
                " ".join(
                    [
                        c.kind,
                        _fmt(c.epsilon),
                        _fmt(float(np.mean(c.f1_every_step))),
                        _fmt(float(np.mean(c.f1_selective_capped))),
                        _fmt(float(np.mean(c.rmse_adv_every_step))),
                    ]
                )
            )
        lines.append("")

    lines.append("[published household reference]  (context only, never asserted)")
    lines.append("kind epsilon rmse_adv_selective rmse_adv_baseline f1_selective f1_baseline")
    for (kind, eps), vals in REFERENCE_HOUSEHOLD.items():
        lines.append(
            f"{kind} {_fmt(eps)} " + " ".join(_fmt(v) for v in vals)
        )
    lines.append("")
    return "\n".join(lines)


def _parse_value(raw: str):
    text = raw.strip()
    if text.lower() in ("none", "null", ""):
        return None
    if text.lower() in ("true", "false"):
        return text.lower() == "true"
    if "," in text:
        return tuple(_parse_value(part) for part in text.split(",") if part.strip())
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    return text


def load_config_file(path) -> dict:
    """Plain key-value config: one `key = value` per line, # comments."""
    mapping = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        if "=" not in text:
            raise ConfigurationError(f"{path}:{lineno}: expected 'key = value'")
        key, _, raw = text.partition("=")
        mapping[key.strip()] = _parse_value(raw)
    return mapping


def config_from_mapping(mapping: dict) -> ExperimentConfig:
    valid = {f.name for f in dataclasses.fields(ExperimentConfig)}
    unknown = set(mapping) - valid
    if unknown:
        raise ConfigurationError(f"unknown config keys: {sorted(unknown)}")
    return ExperimentConfig(**mapping)


def render_config_file(config: ExperimentConfig) -> str:
    """Config as `key = value` lines that load_config_file reads back."""

    def fmt(name, v):
        if name == "every_step_cells":
            return ",".join(f"{k}:{e!r}" for k, e in v) if v else "none"
        if isinstance(v, tuple):
            return ",".join(fmt(name, item) for item in v) if v else "none"
        if v is None:
            return "none"
        if isinstance(v, bool):
            return "true" if v else "false"
        if isinstance(v, float):
            return repr(v)
        return str(v)

    lines = []
    for f in sorted(dataclasses.fields(ExperimentConfig), key=lambda f: f.name):
        if f.name == "output_dir":
            continue
        lines.append(f"{f.name} = {fmt(f.name, getattr(config, f.name))}")
    return "\n".join(lines) + "\n"
