"""Tests for the variance-collapse grid"""
import json

import numpy as np
import pandas as pd
import pytest

from src.experiments import (
    FAILED_MANIFEST,
    GRID_COLUMNS,
    curve_label,
    figure1,
    grid_cells,
    grid_frame,
    kernel_slug,
    run_cell,
)
from src.errors import ConfigError

SMALL_GRID = dict(kernels=["rbf(1.0)"], dims=[1, 2], particles=[5], lams=[0.0, 0.5], seeds=2, iterations=20)
BOTH_KERNELS = ["rbf(1.0)", "imq(1.0,1.0)"]


class TestGridCells:
    def test_cell_count_and_fields(self):
        cells = grid_cells({**SMALL_GRID, "schedule": "harmonic(10.0)"})
        assert len(cells) == 1 * 2 * 1 * 2 * 2
        first = cells[0]
        assert (first.target, first.init, first.metrics) == ("gauss(1)", "gauss", ("damv",))
        assert first.record_every == 20
        assert first.retention == "every(20)"

    def test_explicit_seed_list(self):
        cells = grid_cells({**SMALL_GRID, "seeds": [4, 9], "schedule": "harmonic(10.0)"})
        assert sorted({cell.seed for cell in cells}) == [4, 9]

    def test_needs_iterations(self):
        with pytest.raises(ConfigError):
            grid_cells({**SMALL_GRID, "iterations": 0, "schedule": "harmonic(10.0)"})

    def test_run_cell(self):
        row = run_cell(grid_cells({**SMALL_GRID, "schedule": "harmonic(10.0)"})[0])
        assert list(row) == GRID_COLUMNS
        assert row["damv"] > 0


class TestFigure1:
    def test_small_grid(self, tmp_path):
        result = figure1(tmp_path, workers=1, **SMALL_GRID)
        assert result.complete
        assert len(result.frame) == 8
        frame = pd.read_csv(result.csv_path)
        assert list(frame.columns) == GRID_COLUMNS
        keys = list(frame[["kernel", "d", "n", "lam", "seed"]].itertuples(index=False, name=None))
        assert keys == sorted(keys)
        assert not (tmp_path / FAILED_MANIFEST).exists()

        (plot,) = result.plots
        assert plot.name == "figure1_rbf_1_0.svg"
        text = plot.read_text()
        assert "SVGD n=5" in text
        assert "noisy SVGD lambda=0.5 n=5" in text

    def test_csv_is_byte_identical(self, tmp_path):
        figure1(tmp_path / "a", workers=1, **SMALL_GRID)
        figure1(tmp_path / "b", workers=1, **SMALL_GRID)
        for name in ("figure1.csv", "figure1_rbf_1_0.svg"):
            assert (tmp_path / "a" / name).read_bytes() == (tmp_path / "b" / name).read_bytes()

    def test_pool_matches_serial(self, tmp_path):
        serial = figure1(tmp_path / "serial", workers=1, **SMALL_GRID)
        pooled = figure1(tmp_path / "pooled", workers=2, **SMALL_GRID)
        pd.testing.assert_frame_equal(serial.frame, pooled.frame)

    def test_failed_cells_are_listed(self, tmp_path):
        result = figure1(
            tmp_path, workers=1, kernels=["rbf(1.0)"], dims=[1], particles=[5], lams=[0.5], seeds=1,
            iterations=200, schedule="constant(100.0)",
        )
        assert not result.complete
        assert result.frame.empty
        assert result.plots == ()
        failed = json.loads((tmp_path / FAILED_MANIFEST).read_text())
        assert len(failed) == 1
        assert failed[0]["lam"] == 0.5
        assert "non-finite" in failed[0]["error"]
        assert pd.read_csv(result.csv_path).empty

    def test_stale_manifest_removed(self, tmp_path):
        (tmp_path / FAILED_MANIFEST).write_text("[]\n")
        figure1(tmp_path, workers=1, **{**SMALL_GRID, "dims": [1], "seeds": 1})
        assert not (tmp_path / FAILED_MANIFEST).exists()

    @pytest.mark.slow
    def test_noise_prevents_collapse(self, tmp_path):
        result = figure1(
            tmp_path, workers=1, kernels=["rbf(1.0)"], dims=[1, 50], particles=[50], lams=[0.0, 1.0], seeds=2
        )
        means = result.frame.groupby(["d", "lam"])["damv"].mean()
        assert means[(50, 0.0)] < means[(1, 0.0)]
        assert means[(50, 1.0)] > means[(50, 0.0)]

    @pytest.mark.slow
    def test_noisy_curves_approach_unit_variance(self, tmp_path):
        seeds = 5
        result = figure1(
            tmp_path, kernels=BOTH_KERNELS, dims=[2, 10, 50], particles=[50, 100, 200, 500],
            lams=[0.1, 0.5, 1.0], seeds=seeds,
        )
        assert result.complete
        means = result.frame.groupby(["kernel", "lam", "d", "n"])["damv"].mean()
        for (kernel, lam, d), curve in means.groupby(level=["kernel", "lam", "d"]):
            deviation = (curve - 1.0).abs().to_numpy()
            ns = curve.index.get_level_values("n").to_numpy()
            # three standard errors of a mean sample variance
            slack = 3.0 * np.sqrt(2.0 / ((ns[:-1] - 1) * d * seeds))
            increases = int(np.sum(deviation[1:] > deviation[:-1] + slack))
            assert increases <= 1, (kernel, lam, d, deviation)
            assert deviation[-1] <= 0.15, (kernel, lam, d, deviation)

    @pytest.mark.slow
    def test_plain_svgd_collapses_with_dimension(self, tmp_path):
        result = figure1(tmp_path, kernels=BOTH_KERNELS, dims=[2, 100], particles=[100], lams=[0.0], seeds=10)
        assert result.complete
        means = result.frame.groupby(["kernel", "d"])["damv"].mean()
        for kernel in BOTH_KERNELS:
            assert means[(kernel, 100)] <= 0.5 * means[(kernel, 2)]


def test_grid_frame_sorts_rows():
    rows = [
        {"kernel": "rbf(1.0)", "d": 2, "n": 5, "lam": 0.0, "seed": 1, "damv": 0.1},
        {"kernel": "imq(1.0,1.0)", "d": 2, "n": 5, "lam": 0.0, "seed": 0, "damv": 0.2},
        {"kernel": "rbf(1.0)", "d": 1, "n": 5, "lam": 0.0, "seed": 0, "damv": 0.3},
    ]
    frame = grid_frame(rows)
    assert frame["damv"].tolist() == [0.2, 0.3, 0.1]


def test_labels():
    assert curve_label({"lam": 0.0, "n": 50}) == "SVGD n=50"
    assert curve_label({"lam": 0.5, "n": 100}) == "noisy SVGD lambda=0.5 n=100"
    assert kernel_slug("imq(1.0,1.0)") == "imq_1_0_1_0"
