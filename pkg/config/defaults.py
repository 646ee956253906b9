"""
Default Configuration

Registry of defaults for single runs, the variance-collapse grid and the
reference-flow checks. The grid uses gamma_k = 10/k for 200 iterations over
10 seeds per cell, sized to finish on a desktop.

A .env file (or the environment) may set NSVGD_OUTPUT_DIR and NSVGD_WORKERS.
"""
import os

from dotenv import load_dotenv

load_dotenv()

OUTPUT_DIR_ENV = "NSVGD_OUTPUT_DIR"
WORKERS_ENV = "NSVGD_WORKERS"

# upper bound on particle positions kept for averaged measures
MAX_POOL_POINTS = 1_000_000

DEFAULT_RUN = {
    "n": 100,
    "d": 2,
    "lam": 0.1,
    "kernel": "rbf(1.0)",
    "target": "gauss(2)",
    "schedule": "harmonic(10.0)",
    "iterations": 200,
    "seed": 0,
    "init": "gauss",
    "record_every": 10,
    "retention": "auto",
    "metrics": ["damv", "ksd", "proxy"],
    "w2_samples": 500,
}

FIGURE1_GRID = {
    "kernels": ["rbf(1.0)", "imq(1.0,1.0)"],
    "dims": [1, 2, 5, 10, 20, 50, 100],
    "particles": [50, 100, 200, 500],
    "lams": [0.0, 0.1, 0.5, 1.0],
    "seeds": 10,
    "iterations": 200,
    "schedule": "harmonic(10.0)",
}

LYAPUNOV_DEFAULTS = {
    "target": "gauss(1)",
    "kernel": "rbf(1.0)",
    "lam": 0.5,
    "n_ref": 2000,
    "dt": 0.01,
    "horizon": 5.0,
    "init": "gauss(2.0)",
    "snapshot_every": 10,
    "seed": 0,
    "burn_in": 0.1,
}

# W2 exact solver switches to sliced estimates above this combined support size
W2_SUPPORT_CAP = 2000
SLICED_PROJECTIONS = 128


def get_output_dir(default="results"):
    """Default output directory, from NSVGD_OUTPUT_DIR when set"""
    return os.environ.get(OUTPUT_DIR_ENV, default)


def get_worker_count():
    """Worker-pool size for grids, from NSVGD_WORKERS, else the CPU count"""
    value = os.environ.get(WORKERS_ENV)
    if value:
        return max(1, int(value))
    return os.cpu_count() or 1


def get_figure1_grid(**overrides):
    """Copy of the collapse-experiment grid with overrides applied"""
    grid = dict(FIGURE1_GRID)
    grid.update({key: value for key, value in overrides.items() if value is not None})
    return grid


def get_lyapunov_defaults(**overrides):
    """Copy of the reference-flow defaults with overrides applied"""
    settings = dict(LYAPUNOV_DEFAULTS)
    settings.update({key: value for key, value in overrides.items() if value is not None})
    return settings
