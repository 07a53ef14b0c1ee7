"""Streaming quantile forecasting with conformal intervals, plus a
selective adversarial-attack laboratory: gradient attacks fired only when
the conformal interval is wide, measured against non-selective baselines
and an LID-based detector."""

from .attacks import (
    AttackConfig,
    PerturbationRecord,
    attack,
    attack_batch,
    bim,
    fgsm,
    nifgsm,
)
from .buffer import RollingBuffer, Segment, WindowSample, make_windows, stack_windows
from .conformal import (
    ConformalCalibrator,
    IntervalRecord,
    calibrate,
    calibrate_from_scores,
    conformal_interval,
    conformity_score,
    interval_arrays,
    load_calibrator,
    save_calibrator,
)
from .detector import (
    DetectorModel,
    LidConfig,
    LidFeaturizer,
    classification_metrics,
    fit_detector,
    lid_estimate,
    lid_estimate_batch,
    load_detector,
    save_detector,
)
from .errors import (
    AdvstreamError,
    AttackError,
    ConfigurationError,
    DataSizeError,
    EmptyDataError,
    FormatError,
    TrainingError,
    UsageError,
)
from .forecaster import (
    ForecasterConfig,
    ForecasterModel,
    ForecastOutput,
    load_model,
    save_model,
    train,
)
from .harness import (
    ComparisonReport,
    ExperimentConfig,
    MetricsReport,
    Prepared,
    RunResult,
    StepRecord,
    StreamDetector,
    build_frame,
    compare_modes,
    emit_plots,
    fit_stream_detector,
    load_config_file,
    prepare,
    render_comparison,
    render_report,
    rmse_adv,
    run_stream,
)
from .ingest import TimeSeriesFrame, load_household_csv, synth_stream
from .numerics import Network, Tensor2, conv1d_forward, pinball_loss
from .quantiles import nominal_rank, nominal_rank_quantile
from .trigger import ThresholdState, should_attack, update_threshold

__version__ = "0.1.0"

__all__ = [
    "AdvstreamError",
    "AttackConfig",
    "AttackError",
    "ComparisonReport",
    "ConfigurationError",
    "ConformalCalibrator",
    "DataSizeError",
    "DetectorModel",
    "EmptyDataError",
    "ExperimentConfig",
    "ForecastOutput",
    "ForecasterConfig",
    "ForecasterModel",
    "FormatError",
    "IntervalRecord",
    "LidConfig",
    "LidFeaturizer",
    "MetricsReport",
    "Network",
    "PerturbationRecord",
    "Prepared",
    "RollingBuffer",
    "RunResult",
    "Segment",
    "StepRecord",
    "StreamDetector",
    "Tensor2",
    "ThresholdState",
    "TimeSeriesFrame",
    "TrainingError",
    "UsageError",
    "WindowSample",
    "attack",
    "attack_batch",
    "bim",
    "build_frame",
    "calibrate",
    "calibrate_from_scores",
    "classification_metrics",
    "compare_modes",
    "conformal_interval",
    "conformity_score",
    "conv1d_forward",
    "emit_plots",
    "fgsm",
    "fit_detector",
    "fit_stream_detector",
    "interval_arrays",
    "lid_estimate",
    "lid_estimate_batch",
    "load_calibrator",
    "load_config_file",
    "load_detector",
    "load_household_csv",
    "load_model",
    "make_windows",
    "nifgsm",
    "nominal_rank",
    "nominal_rank_quantile",
    "pinball_loss",
    "prepare",
    "render_comparison",
    "render_report",
    "rmse_adv",
    "run_stream",
    "save_calibrator",
    "save_detector",
    "save_model",
    "should_attack",
    "stack_windows",
    "synth_stream",
    "train",
    "update_threshold",
]
