"""
Experiments

The variance-collapse grid: final-iterate DAMV of SVGD and noisy SVGD on the
standard Gaussian, swept over kernel, dimension, particle count, lambda and
seed. Cells are independent runs executed by a process pool; the CSV is
sorted by grid keys so it does not depend on completion order.
"""
import json
import logging
import re
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass
from itertools import product
from pathlib import Path

import pandas as pd

from config.defaults import get_figure1_grid, get_worker_count
from src.dynamics import run
from src.errors import ConfigError, NoisySVGDError
from src.metrics import write_csv
from src.plotting import PlotSpec, plot_frame
from src.run_config import RunConfig, validate_config

logger = logging.getLogger(__name__)

GRID_COLUMNS = ["kernel", "d", "n", "lam", "seed", "damv"]
GRID_KEYS = GRID_COLUMNS[:-1]
GRID_CSV = "figure1.csv"
FAILED_MANIFEST = "figure1_failed.json"


@dataclass(frozen=True)
class GridResult:
    """Outcome of a grid: the long-format frame, failed cells and written files"""

    frame: pd.DataFrame
    failed: list
    csv_path: Path
    plots: tuple

    @property
    def complete(self):
        return not self.failed


def grid_cells(grid):
    """
    One RunConfig per (kernel, d, n, lam, seed)

    Every cell runs `iterations` steps of the grid schedule from N(0, I) on
    the d-dimensional standard Gaussian and keeps only the first and the
    final snapshot.
    """
    seeds = grid["seeds"]
    seeds = range(seeds) if isinstance(seeds, int) else seeds
    iterations = int(grid["iterations"])
    if iterations < 1:
        raise ConfigError("grid iterations must be at least 1")
    cells = []
    for kernel, d, n, lam, seed in product(grid["kernels"], grid["dims"], grid["particles"], grid["lams"], seeds):
        cells.append(
            RunConfig(
                n=int(n),
                d=int(d),
                lam=float(lam),
                kernel=kernel,
                target=f"gauss({int(d)})",
                schedule=grid["schedule"],
                iterations=iterations,
                seed=int(seed),
                init="gauss",
                record_every=iterations,
                retention=f"every({iterations})",
                metrics=("damv",),
            )
        )
    return cells


def run_cell(config):
    """Final DAMV of one cell; module-level so that worker processes can import it"""
    _, records = run(validate_config(config, probe=False))
    return {
        "kernel": config.kernel,
        "d": config.d,
        "n": config.n,
        "lam": config.lam,
        "seed": config.seed,
        "damv": records[-1].damv,
    }


def _cell_key(config):
    return {key: getattr(config, key) for key in GRID_KEYS}


def run_grid(cells, workers=None):
    """
    Execute cells, serially for one worker and on a process pool otherwise

    Returns:
        (rows, failed) where failed holds the cell keys and error messages
    """
    workers = workers or get_worker_count()
    rows, failed = [], []
    logger.info("running %d grid cells on %d workers", len(cells), workers)
    if workers == 1:
        for config in cells:
            try:
                rows.append(run_cell(config))
            except NoisySVGDError as exc:
                logger.warning("cell %s failed: %s", _cell_key(config), exc)
                failed.append({**_cell_key(config), "error": str(exc)})
        return rows, failed

    with ProcessPoolExecutor(max_workers=workers) as pool:
        futures = {pool.submit(run_cell, config): config for config in cells}
        for future in as_completed(futures):
            config = futures[future]
            try:
                rows.append(future.result())
            except NoisySVGDError as exc:
                logger.warning("cell %s failed: %s", _cell_key(config), exc)
                failed.append({**_cell_key(config), "error": str(exc)})
    return rows, failed


def grid_frame(rows):
    """Long-format frame in canonical (kernel, d, n, lam, seed) order"""
    frame = pd.DataFrame(rows, columns=GRID_COLUMNS)
    return frame.sort_values(GRID_KEYS, kind="mergesort").reset_index(drop=True)


def curve_label(values):
    """Legend entry for one (lam, n) curve"""
    if float(values["lam"]) == 0.0:
        return f"SVGD n={values['n']}"
    return f"noisy SVGD lambda={values['lam']:g} n={values['n']}"


def kernel_slug(kernel):
    return re.sub(r"[^A-Za-z0-9]+", "_", kernel).strip("_")


def plot_grid(frame, out_dir):
    """One SVG per kernel: DAMV against dimension, one curve per (lam, n)"""
    paths = []
    for kernel in sorted(frame["kernel"].unique()):
        spec = PlotSpec(
            x="d",
            y="damv",
            group=("lam", "n"),
            title=f"DAMV at the final iterate, kernel {kernel}",
            xlabel="dimension d",
            ylabel="DAMV (mean +- sample std over seeds)",
            logx=True,
            label=curve_label,
        )
        path = Path(out_dir) / f"figure1_{kernel_slug(kernel)}.svg"
        plot_frame(frame[frame["kernel"] == kernel], spec, path)
        paths.append(path)
    return tuple(paths)


def figure1(out_dir, workers=None, **grid_overrides):
    """
    Run the variance-collapse grid and write its artifacts

    Args:
        out_dir: Output directory
        workers: Pool size (defaults to NSVGD_WORKERS or the CPU count)
        **grid_overrides: kernels, dims, particles, lams, seeds, iterations, schedule

    Returns:
        GridResult; figure1.csv always holds the finished cells and
        figure1_failed.json lists cells that raised
    """
    grid = get_figure1_grid(**grid_overrides)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    rows, failed = run_grid(grid_cells(grid), workers)
    frame = grid_frame(rows)
    csv_path = out_dir / GRID_CSV
    write_csv(frame, csv_path)

    manifest = out_dir / FAILED_MANIFEST
    if failed:
        failed = sorted(failed, key=lambda cell: tuple(cell[key] for key in GRID_KEYS))
        manifest.write_text(json.dumps(failed, indent=2) + "\n")
        logger.warning("%d grid cells failed, see %s", len(failed), manifest)
    elif manifest.exists():
        manifest.unlink()

    plots = plot_grid(frame, out_dir) if not frame.empty else ()
    return GridResult(frame, failed, csv_path, plots)
