"""Shared fixtures: the household-format CSV and the full-scale comparison.

The repository ships no copy of the household power dataset, so the session
builds a stand-in: the synthetic generator's output written in the original
semicolon layout (Date;Time;7 numeric columns, "?" missing markers, %.3f
values).  Each column gets a positive affine rescale to household-like
magnitudes; initial-buffer min-max normalization cancels the rescale, so
the harness sees the same normalized stream the generator produced.  Set
ADVSTREAM_HOUSEHOLD_CSV to a real household_power_consumption.txt-style
file to run the full-scale tests against it instead.
"""

import os
import time
from types import SimpleNamespace

import numpy as np
import pandas as pd
import pytest

from advstream.harness import ExperimentConfig, compare_modes
from advstream.ingest import synth_stream

HOUSEHOLD_ENV = "ADVSTREAM_HOUSEHOLD_CSV"
HOUSEHOLD_COLUMNS = [
    "Global_active_power",
    "Global_reactive_power",
    "Voltage",
    "Global_intensity",
    "Sub_metering_1",
    "Sub_metering_2",
    "Sub_metering_3",
]
_SCALES = np.array([4.0, 0.6, 10.0, 20.0, 30.0, 25.0, 18.0])
_OFFSETS = np.array([0.0, 0.0, 235.0, 0.0, 0.0, 0.0, 0.0])

FULL_CAPACITY = 43_200        # 30 days of minutes
FULL_STREAM = 50_000
CSV_ROWS = 93_700
CORRUPT_ROWS = 400


def build_household_standin(path) -> None:
    frame = synth_stream(seed=1000, n=CSV_ROWS, d=len(HOUSEHOLD_COLUMNS))
    scaled = frame.features * _SCALES + _OFFSETS
    cells = np.char.mod("%.3f", scaled)
    rng = np.random.default_rng(np.random.SeedSequence([555, 1000]))
    bad_rows = rng.choice(CSV_ROWS, size=CORRUPT_ROWS, replace=False)
    bad_cols = rng.integers(0, cells.shape[1], size=CORRUPT_ROWS)
    cells[bad_rows, bad_cols] = "?"
    stamps = pd.to_datetime(frame.timestamps)
    df = pd.DataFrame(cells, columns=HOUSEHOLD_COLUMNS)
    df.insert(0, "Time", stamps.strftime("%H:%M:%S"))
    df.insert(0, "Date", stamps.strftime("%d/%m/%Y"))
    df.to_csv(path, sep=";", index=False)


@pytest.fixture(scope="session")
def household_csv(tmp_path_factory):
    override = os.environ.get(HOUSEHOLD_ENV)
    if override:
        return override
    path = tmp_path_factory.mktemp("household") / "household_power.csv"
    build_household_standin(path)
    return str(path)


def full_compare_config(household_csv: str) -> ExperimentConfig:
    return ExperimentConfig(
        source="household",
        data_path=household_csv,
        capacity=FULL_CAPACITY,
        stream_steps=FULL_STREAM,
        seeds=(0, 1, 2),
        kinds=("fgsm", "bim", "nifgsm"),
        epsilons=(0.05, 0.10, 0.15),
        every_step_cells=("fgsm:0.05", "fgsm:0.1", "bim:0.05", "bim:0.1"),
        every_step_cap=10_000,
    )


@pytest.fixture(scope="session")
def full_compare(household_csv):
    """The headline experiment: 3 seeds x 9 cells, selective vs baselines.

    Session-scoped because it is by far the most expensive fixture; the
    acceptance tests that concern rates, ratios, orderings, and detector
    comparisons all read from this one run.
    """
    config = full_compare_config(household_csv)
    start = time.perf_counter()
    report = compare_modes(config)
    elapsed = time.perf_counter() - start
    return SimpleNamespace(report=report, elapsed=elapsed, config=config)
