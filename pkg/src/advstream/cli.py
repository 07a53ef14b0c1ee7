"""Command-line front end: train, calibrate, run, compare, detect.

Flags mirror ExperimentConfig fields (underscores become hyphens) and a
`--config FILE` of `key = value` lines can seed them; explicit flags win.
Exits 0 on success, otherwise prints one `error[category]: message` line
on stderr with a category-specific code.
"""

from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import conformal as conformal_mod
from . import detector as detector_mod
from . import forecaster as forecaster_mod
from . import harness
from .buffer import RollingBuffer
from .errors import (
    AttackError,
    ConfigurationError,
    DataSizeError,
    EmptyDataError,
    FormatError,
    TrainingError,
    UsageError,
)

_EXIT_CODES = (
    (ConfigurationError, "config", 2),
    (UsageError, "usage", 3),
    (EmptyDataError, "data", 4),
    (DataSizeError, "data", 4),
    (FormatError, "format", 5),
    (TrainingError, "training", 6),
    (AttackError, "attack", 7),
    (OSError, "io", 8),
)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    group = parser.add_argument_group("experiment config")
    group.add_argument("--config", metavar="FILE", help="key = value config file")
    for f in dataclasses.fields(harness.ExperimentConfig):
        if f.name == "output_dir":
            continue
        group.add_argument(
            "--" + f.name.replace("_", "-"),
            dest=f.name,
            default=None,
            metavar="V",
        )


def _config_from_args(args: argparse.Namespace) -> harness.ExperimentConfig:
    mapping = {}
    if getattr(args, "config", None):
        mapping.update(harness.load_config_file(args.config))
    for f in dataclasses.fields(harness.ExperimentConfig):
        raw = getattr(args, f.name, None)
        if raw is None:
            continue
        mapping[f.name] = harness._parse_value(raw) if isinstance(raw, str) else raw
    if getattr(args, "out", None):
        mapping["output_dir"] = args.out
    return harness.config_from_mapping(mapping)


def _save_stats(prepared: harness.Prepared, path: Path) -> None:
    np.savez(
        path,
        norm_min=prepared.norm_min,
        norm_max=prepared.norm_max,
        target_index=np.array(prepared.target_index),
    )


def _prepared_from_artifacts(config, frame, artifacts_dir, calibrator_path=None):
    """Rebuild a Prepared bundle around saved artifacts.

    The buffer segments are reconstructed from the stream (cheap and
    deterministic); the stored normalization stats must match the rebuilt
    ones, which guards against pairing a model with a different stream.
    """
    art = Path(artifacts_dir)
    model = forecaster_mod.load_model(art / "model")
    if model.n_features != frame.n_features:
        raise FormatError(
            f"model expects {model.n_features} features, stream has {frame.n_features}"
        )
    stats = np.load(art / "stats.npz")
    if frame.n_rows < config.capacity:
        raise DataSizeError(
            f"{frame.n_rows} rows cannot fill a buffer of {config.capacity}"
        )
    buf = RollingBuffer(config.capacity, frame.n_features)
    for i in range(config.capacity):
        buf.push(frame.features[i])
    if not (
        np.array_equal(stats["norm_min"], buf.norm_min)
        and np.array_equal(stats["norm_max"], buf.norm_max)
    ):
        raise FormatError(
            "saved normalization stats do not match this stream's initial buffer"
        )
    train_seg, calib_seg = buf.split_initial(frame.target_index)
    from .buffer import make_windows, stack_windows

    calib_windows = make_windows(calib_seg, config.window)
    if calibrator_path is not None:
        calibrator = conformal_mod.load_calibrator(calibrator_path)
    else:
        calibrator = conformal_mod.calibrate(model, calib_windows, config.miscoverage)
    train_x, _, _ = stack_windows(make_windows(train_seg, config.window))
    calib_x, calib_y, _ = stack_windows(calib_windows)
    return harness.Prepared(
        model=model,
        calibrator=calibrator,
        norm_min=buf.norm_min.copy(),
        norm_max=buf.norm_max.copy(),
        target_index=frame.target_index,
        ref_windows=train_x[-config.lid_batch :].copy(),
        calib_x=calib_x,
        calib_y=calib_y,
    )


def _get_prepared(config, frame, args):
    if getattr(args, "artifacts", None):
        return _prepared_from_artifacts(
            config, frame, args.artifacts, getattr(args, "calibrator", None)
        )
    return harness.prepare(config, frame)


def cmd_train(args) -> int:
    config = _config_from_args(args)
    frame = harness.build_frame(config)
    prepared = harness.prepare(config, frame)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    forecaster_mod.save_model(prepared.model, out / "model")
    _save_stats(prepared, out / "stats.npz")
    (out / "config.txt").write_text(harness.render_config_file(config))
    print(f"model saved to {out / 'model'}")
    print(f"params_sha256 = {prepared.model.params_sha256()}")
    return 0


def cmd_calibrate(args) -> int:
    config = _config_from_args(args)
    frame = harness.build_frame(config)
    prepared = _prepared_from_artifacts(config, frame, args.artifacts)
    conformal_mod.save_calibrator(prepared.calibrator, args.out)
    print(f"calibrator saved to {args.out}")
    print(f"correction = {prepared.calibrator.correction!r}")
    print(f"calib_size = {prepared.calibrator.calib_size}")
    return 0


def cmd_run(args) -> int:
    config = _config_from_args(args)
    frame = harness.build_frame(config)
    prepared = _get_prepared(config, frame, args)
    result = harness.run_stream(config, frame, prepared)
    text = harness.render_report(result.report)
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        (out / "report.txt").write_text(text)
        harness.emit_plots(result.records, out)
    print(text)
    return 0


def cmd_compare(args) -> int:
    config = _config_from_args(args)
    report = harness.compare_modes(config)
    print(harness.render_comparison(report))
    return 0


def cmd_detect(args) -> int:
    config = _config_from_args(args)
    frame = harness.build_frame(config)
    prepared = _get_prepared(config, frame, args)
    det = harness.fit_stream_detector(config, prepared)
    clean, adv = harness.detector_pools(config, prepared)
    scores = np.concatenate(
        [det.score_windows(clean), det.score_windows(adv)]
    )
    truth = np.concatenate(
        [np.zeros(clean.shape[0], bool), np.ones(adv.shape[0], bool)]
    )
    precision, recall, f1 = detector_mod.classification_metrics(
        truth, scores >= det.model.threshold
    )
    out = Path(args.out)
    detector_mod.save_detector(
        det.model, prepared.ref_windows[: config.lid_batch], out / "detector"
    )
    print(f"detector saved to {out / 'detector'}")
    print(f"threshold = {det.model.threshold!r}")
    print(f"pool precision = {precision!r}")
    print(f"pool recall = {recall!r}")
    print(f"pool f1 = {f1!r}")
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="advstream",
        description="Streaming forecaster with conformal intervals and a "
        "selective adversarial-attack harness.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train the forecaster; save model + stats")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("calibrate", help="fit the conformal correction")
    p.add_argument("--artifacts", required=True, metavar="DIR",
                   help="directory written by `train`")
    p.add_argument("--out", required=True, metavar="FILE")
    _add_config_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("run", help="one streaming run in the configured mode")
    p.add_argument("--artifacts", metavar="DIR",
                   help="reuse a `train` directory instead of retraining")
    p.add_argument("--calibrator", metavar="FILE")
    p.add_argument("--out", metavar="DIR", help="write report.txt + plot files")
    _add_config_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("compare", help="selective vs baseline over the grid")
    p.add_argument("--out", metavar="DIR", help="write compare.txt + plots")
    _add_config_flags(p)
    p.set_defaults(func=cmd_compare)

    p = sub.add_parser("detect", help="fit and save the LID detector")
    p.add_argument("--artifacts", metavar="DIR")
    p.add_argument("--calibrator", metavar="FILE")
    p.add_argument("--out", required=True, metavar="DIR")
    _add_config_flags(p)
    p.set_defaults(func=cmd_detect)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except Exception as exc:  # mapped to categorized exit codes
        for exc_type, category, code in _EXIT_CODES:
            if isinstance(exc, exc_type):
                print(f"error[{category}]: {exc}", file=sys.stderr)
                return code
        print(f"error[internal]: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
