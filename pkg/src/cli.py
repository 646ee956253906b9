"""
Command-line driver

    python -m src.cli run       [--config run.json] [--set key=value ...] [--seed S] [--out DIR] [--trajectory]
    python -m src.cli figure1   [--set kernels='["rbf(1.0)"]' ...] [--workers W] [--out DIR]
    python -m src.cli lyapunov  [--config flow.json] [--set key=value ...] [--seed S] [--out DIR] [--flow]
    python -m src.cli plot      CSV --x COL --y COL [--group COL,COL] [--title T] [--logx] [--out SVG]

Exit codes: 0 success, 1 run failure (blow-up, failed check), 2 invalid
configuration or input.
"""
import argparse
import json
import logging
import sys
from pathlib import Path

from config.defaults import FIGURE1_GRID, LYAPUNOV_DEFAULTS, get_lyapunov_defaults, get_output_dir
from src.dynamics import run, save_trajectory
from src.errors import ConfigError, NoisySVGDError, OracleError, PlotError
from src.experiments import figure1
from src.kernels import kernel_from_spec
from src.metrics import write_csv, write_metrics_csv
from src.oracle import contraction_check, lyapunov_check, mv_reference_flow
from src.plotting import parse_plot_spec, plot_csv
from src.run_config import (
    RunConfig,
    apply_overrides,
    load_config,
    parse_override,
    require_number,
    save_config,
    validate_config,
)
from src.targets import target_from_spec

logger = logging.getLogger(__name__)

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_INVALID = 2


def _format(value):
    return "n/a" if value is None else f"{value:.6g}"


def _read_settings(path, defaults):
    """JSON settings file merged over a defaults dict; unknown keys rejected"""
    settings = dict(defaults)
    if path:
        try:
            loaded = json.loads(Path(path).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read settings {path}: {exc}") from exc
        settings.update(loaded)
    return settings


def _apply_settings_overrides(settings, overrides, known):
    for item in overrides or ():
        key, value = parse_override(item)
        settings[key] = value
    unknown = set(settings) - set(known)
    if unknown:
        raise ConfigError(f"unknown keys {sorted(unknown)}; expected {sorted(known)}")
    return settings


def cmd_run(args):
    config = load_config(args.config) if args.config else RunConfig()
    config = apply_overrides(config, args.set)
    if args.seed is not None:
        config = config.with_overrides(seed=args.seed)
    validated = validate_config(config)

    trajectory, records = run(validated)
    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_metrics_csv(records, out_dir / "metrics.csv")
    save_config(config, out_dir / "config.json")
    if args.trajectory:
        save_trajectory(trajectory, out_dir / "trajectory.nsvgd")

    final = records[-1]
    flags = ",".join(validated.flags) or "none"
    print(
        f"run: n={config.n} d={config.d} lam={config.lam:g} K={config.iterations} "
        f"damv={_format(final.damv)} ksd2={_format(final.ksd_squared)} "
        f"w2={_format(final.w2_to_target)} flags={flags} -> {out_dir / 'metrics.csv'}"
    )
    return EXIT_OK


def cmd_figure1(args):
    grid = _apply_settings_overrides(dict(FIGURE1_GRID), args.set, FIGURE1_GRID)
    result = figure1(args.out, workers=args.workers, **grid)
    cells = len(result.frame)
    print(
        f"figure1: {cells} cells, {len(result.failed)} failed, "
        f"{len(result.plots)} plots -> {result.csv_path}"
    )
    return EXIT_OK if result.complete else EXIT_FAILURE


def cmd_lyapunov(args):
    settings = _read_settings(args.config, get_lyapunov_defaults())
    settings = _apply_settings_overrides(settings, args.set, LYAPUNOV_DEFAULTS)
    if args.seed is not None:
        settings["seed"] = args.seed
    for key in ("n_ref", "snapshot_every", "seed"):
        require_number(settings[key], key, integer=True)
    for key in ("lam", "dt", "horizon", "burn_in"):
        require_number(settings[key], key)
    for key in ("target", "kernel", "init"):
        if not isinstance(settings[key], str):
            raise ConfigError(f"{key} must be a spec string, got {settings[key]!r}")
    if not settings["lam"] >= 0:
        raise ConfigError("lambda must be non-negative")
    target = target_from_spec(settings["target"])
    if not target.has_moments:
        raise ConfigError(
            f"target {target.name} has no analytic moments; the Lyapunov check needs a Gaussian target"
        )
    kernel = kernel_from_spec(settings["kernel"])
    lam = float(settings["lam"])

    flow = mv_reference_flow(
        target,
        kernel,
        lam,
        int(settings["n_ref"]),
        float(settings["dt"]),
        float(settings["horizon"]),
        int(settings["seed"]),
        init=settings["init"],
        snapshot_every=int(settings["snapshot_every"]),
    )
    report = lyapunov_check(flow, target, kernel, lam, burn_in=settings["burn_in"])
    sections = ["[lyapunov]", report.summary()]
    try:
        contraction = contraction_check(flow, target, lam, burn_in=settings["burn_in"])
        sections += ["", "[contraction]", contraction.summary()]
    except OracleError as exc:
        sections += ["", "[contraction]", f"status: {exc}"]
    sections += ["", "[flow]", f"flags: {', '.join(flow.flags)}"]

    out_dir = Path(args.out)
    out_dir.mkdir(parents=True, exist_ok=True)
    write_csv(report.to_frame(), out_dir / "lyapunov.csv")
    (out_dir / "lyapunov.txt").write_text("\n".join(sections) + "\n")
    if args.flow:
        write_csv(flow.to_frame(), out_dir / "flow.csv")
    print(f"lyapunov: {report.status}, ratio {report.ratio:.3g} -> {out_dir / 'lyapunov.txt'}")
    return EXIT_OK


def cmd_plot(args):
    spec = parse_plot_spec(args.x, args.y, args.group, args.title or "", args.logx)
    out = Path(args.out) if args.out else Path(args.csv).with_suffix(".svg")
    curves = plot_csv(args.csv, out, spec)
    print(f"plot: {curves} curves -> {out}")
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="nsvgd", description="Noisy SVGD experiments")
    parser.add_argument("--verbose", "-v", action="store_true", help="debug logging")
    commands = parser.add_subparsers(dest="command", required=True)

    run_parser = commands.add_parser("run", help="single sampler run")
    run_parser.add_argument("--config", help="RunConfig JSON file")
    run_parser.add_argument("--seed", type=int)
    run_parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="config override")
    run_parser.add_argument("--out", default=get_output_dir())
    run_parser.add_argument("--trajectory", action="store_true", help="also write trajectory.nsvgd")
    run_parser.set_defaults(handler=cmd_run)

    grid_parser = commands.add_parser("figure1", help="variance-collapse grid")
    grid_parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="grid override")
    grid_parser.add_argument("--workers", type=int)
    grid_parser.add_argument("--out", default=get_output_dir())
    grid_parser.set_defaults(handler=cmd_figure1)

    flow_parser = commands.add_parser("lyapunov", help="reference flow with Lyapunov and contraction checks")
    flow_parser.add_argument("--config", help="settings JSON file")
    flow_parser.add_argument("--seed", type=int)
    flow_parser.add_argument("--set", action="append", metavar="KEY=VALUE", help="settings override")
    flow_parser.add_argument("--out", default=get_output_dir())
    flow_parser.add_argument("--flow", action="store_true", help="also write flow.csv")
    flow_parser.set_defaults(handler=cmd_lyapunov)

    plot_parser = commands.add_parser("plot", help="SVG from a CSV")
    plot_parser.add_argument("csv")
    plot_parser.add_argument("--x", required=True)
    plot_parser.add_argument("--y", required=True)
    plot_parser.add_argument("--group", help="comma-separated grouping columns")
    plot_parser.add_argument("--title")
    plot_parser.add_argument("--logx", action="store_true")
    plot_parser.add_argument("--out", help="destination .svg")
    plot_parser.set_defaults(handler=cmd_plot)
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
    )
    try:
        return args.handler(args)
    except (ConfigError, PlotError) as exc:
        logger.debug("invalid input", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    except NoisySVGDError as exc:
        logger.debug("run failed", exc_info=True)
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
