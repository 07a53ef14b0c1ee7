"""Command-line interface: subcommands, artifact reuse, exit codes."""

import shutil

import numpy as np
import pytest

from advstream.cli import main
from advstream.conformal import load_calibrator
from advstream.detector import load_detector
from advstream.forecaster import load_model

CFG_TEXT = """
source = synth
synth_n = 2600
n_features = 4
capacity = 400
window = 24
threshold_window = 120
stream_steps = 1500
epochs = 8
seed = 0
kind = fgsm
epsilon = 0.1
"""


@pytest.fixture(scope="module")
def cfg_file(tmp_path_factory):
    path = tmp_path_factory.mktemp("cfg") / "small.cfg"
    path.write_text(CFG_TEXT)
    return str(path)


@pytest.fixture(scope="module")
def artifacts(tmp_path_factory, cfg_file):
    out = tmp_path_factory.mktemp("artifacts")
    code = main(["train", "--out", str(out), "--config", cfg_file])
    assert code == 0
    return out


class TestTrain:
    def test_writes_artifacts(self, artifacts, capsys):
        assert (artifacts / "model" / "manifest.json").exists()
        assert (artifacts / "model" / "params.npz").exists()
        assert (artifacts / "stats.npz").exists()
        assert (artifacts / "config.txt").exists()
        model = load_model(artifacts / "model")
        assert model.n_features == 4

    def test_stdout_reports_hash(self, cfg_file, tmp_path, capsys):
        assert main(["train", "--out", str(tmp_path / "m"), "--config", cfg_file]) == 0
        out = capsys.readouterr().out
        assert "params_sha256 = " in out

    def test_flag_overrides_config_file(self, cfg_file, tmp_path, capsys):
        code = main(
            ["train", "--out", str(tmp_path / "m"), "--config", cfg_file,
             "--capacity", "500"]
        )
        assert code == 0
        saved = (tmp_path / "m" / "config.txt").read_text()
        assert "capacity = 500" in saved


class TestCalibrate:
    def test_calibrate_from_artifacts(self, artifacts, cfg_file, tmp_path, capsys):
        cal_path = tmp_path / "cal.json"
        code = main(
            ["calibrate", "--artifacts", str(artifacts), "--out", str(cal_path),
             "--config", cfg_file]
        )
        assert code == 0
        cal = load_calibrator(cal_path)
        assert cal.calib_size > 0
        out = capsys.readouterr().out
        assert "correction = " in out


class TestRun:
    def test_run_writes_report_and_plots(self, artifacts, cfg_file, tmp_path, capsys):
        out_dir = tmp_path / "run"
        code = main(
            ["run", "--artifacts", str(artifacts), "--out", str(out_dir),
             "--config", cfg_file]
        )
        assert code == 0
        report = (out_dir / "report.txt").read_text()
        assert "[metrics]" in report
        assert (out_dir / "width_threshold.txt").exists()
        assert (out_dir / "forecast_overlay.txt").exists()
        assert report in capsys.readouterr().out

    def test_artifact_reuse_matches_scratch_run(self, artifacts, cfg_file,
                                                tmp_path, capsys):
        a = tmp_path / "a"
        b = tmp_path / "b"
        assert main(["run", "--artifacts", str(artifacts), "--out", str(a),
                     "--config", cfg_file]) == 0
        assert main(["run", "--out", str(b), "--config", cfg_file]) == 0
        assert (a / "report.txt").read_text() == (b / "report.txt").read_text()

    def test_saved_calibrator_reused(self, artifacts, cfg_file, tmp_path, capsys):
        cal_path = tmp_path / "cal.json"
        assert main(["calibrate", "--artifacts", str(artifacts),
                     "--out", str(cal_path), "--config", cfg_file]) == 0
        out_dir = tmp_path / "run"
        code = main(
            ["run", "--artifacts", str(artifacts), "--calibrator", str(cal_path),
             "--out", str(out_dir), "--config", cfg_file]
        )
        assert code == 0
        cal = load_calibrator(cal_path)
        report = (out_dir / "report.txt").read_text()
        assert f"calibrator = {cal.sha256()}" in report


class TestCompare:
    def test_tiny_grid(self, cfg_file, tmp_path, capsys):
        code = main(
            ["compare", "--config", cfg_file, "--out", str(tmp_path / "cmp"),
             "--seeds", "0", "--kinds", "fgsm", "--epsilons", "0.1"]
        )
        assert code == 0
        out = capsys.readouterr().out
        assert "mean_ratio = " in out
        assert (tmp_path / "cmp" / "compare.txt").exists()


class TestDetect:
    def test_detect_saves_detector(self, artifacts, cfg_file, tmp_path, capsys):
        out_dir = tmp_path / "det"
        code = main(
            ["detect", "--artifacts", str(artifacts), "--out", str(out_dir),
             "--config", cfg_file]
        )
        assert code == 0
        det, ref = load_detector(out_dir / "detector")
        assert ref.shape[1:] == (24, 4)
        out = capsys.readouterr().out
        assert "threshold = " in out and "pool f1 = " in out


class TestExitCodes:
    def test_config_error_is_2(self, cfg_file, tmp_path, capsys):
        code = main(["run", "--config", cfg_file, "--source", "bogus"])
        assert code == 2
        assert "error[config]:" in capsys.readouterr().err

    def test_data_error_is_4(self, cfg_file, tmp_path, capsys):
        code = main(["run", "--config", cfg_file, "--synth-n", "900"])
        assert code == 4
        assert "error[data]:" in capsys.readouterr().err

    def test_format_error_is_5(self, artifacts, cfg_file, tmp_path, capsys):
        # artifacts were trained against the seed-0 stream; a seed-1 stream
        # has different initial-buffer stats, which the run must refuse
        code = main(
            ["run", "--artifacts", str(artifacts), "--config", cfg_file,
             "--seed", "1"]
        )
        assert code == 5
        assert "error[format]:" in capsys.readouterr().err

    def test_io_error_is_8(self, tmp_path, capsys):
        code = main(["run", "--config", str(tmp_path / "missing.cfg")])
        assert code == 8
        assert "error[io]:" in capsys.readouterr().err

    def test_missing_artifacts_is_io(self, cfg_file, tmp_path, capsys):
        code = main(
            ["calibrate", "--artifacts", str(tmp_path / "nope"),
             "--out", str(tmp_path / "cal.json"), "--config", cfg_file]
        )
        assert code == 8

    def test_help_exits_zero(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["--help"])
        assert exc.value.code == 0
        assert "train" in capsys.readouterr().out

    def test_unknown_command_exits_two(self, capsys):
        with pytest.raises(SystemExit) as exc:
            main(["frobnicate"])
        assert exc.value.code == 2


class TestInstallation:
    def test_console_script_on_path(self):
        assert shutil.which("advstream") is not None
