"""
Run Configuration

RunConfig is a flat, JSON-serializable record of one sampler run. Specs for
the kernel, target, schedule, initialization and retention are kept as
strings so that a config file round-trips exactly; validate_config resolves
them into model objects and reports which assumptions hold.
"""
import json
import logging
import math
import numbers
from dataclasses import asdict, dataclass, field, fields, replace
from pathlib import Path
from typing import Optional, Tuple

from config.defaults import DEFAULT_RUN, MAX_POOL_POINTS
from src.contracts import check_kernel, check_target
from src.errors import ConfigError
from src.kernels import MedianRBFKernel, kernel_from_spec
from src.model import StepSchedule, split_spec
from src.rng import PROBES, RngStream
from src.targets import target_from_spec

logger = logging.getLogger(__name__)

METRIC_NAMES = ("damv", "ksd", "w2", "proxy", "averaged")


@dataclass(frozen=True)
class RunConfig:
    """All inputs of one run; every field can be overridden from the CLI"""

    n: int = DEFAULT_RUN["n"]
    d: int = DEFAULT_RUN["d"]
    lam: float = DEFAULT_RUN["lam"]
    kernel: str = DEFAULT_RUN["kernel"]
    target: str = DEFAULT_RUN["target"]
    schedule: str = DEFAULT_RUN["schedule"]
    iterations: int = DEFAULT_RUN["iterations"]
    seed: int = DEFAULT_RUN["seed"]
    init: str = DEFAULT_RUN["init"]
    record_every: int = DEFAULT_RUN["record_every"]
    retention: str = DEFAULT_RUN["retention"]
    metrics: Tuple[str, ...] = tuple(DEFAULT_RUN["metrics"])
    w2_samples: int = DEFAULT_RUN["w2_samples"]
    w2_seed: Optional[int] = None
    run_id: int = 0

    def __post_init__(self):
        object.__setattr__(self, "metrics", tuple(self.metrics))

    def to_dict(self):
        data = asdict(self)
        data["metrics"] = list(self.metrics)
        return data

    @classmethod
    def from_dict(cls, data):
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        return cls(**data)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text):
        try:
            return cls.from_dict(json.loads(text))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config is not valid JSON: {exc}") from exc

    def with_overrides(self, **changes):
        return replace(self, **changes)

    @property
    def effective_w2_seed(self):
        return self.seed if self.w2_seed is None else self.w2_seed


@dataclass(frozen=True)
class Retention:
    """Snapshot retention policy: all, every(m) or reservoir(capacity)"""

    policy: str
    every: int = 1
    capacity: int = 0

    @property
    def keeps_all(self):
        return self.policy == "all" or (self.policy == "every" and self.every == 1)


@dataclass(frozen=True)
class ValidatedConfig:
    """A RunConfig with its specs resolved and assumptions annotated"""

    config: RunConfig
    target: object
    kernel: object
    schedule: StepSchedule
    retention: Retention
    assumptions: dict = field(default_factory=dict)
    reports: tuple = ()

    @property
    def flags(self):
        return sorted(f"{name}-violated" for name, status in self.assumptions.items() if status == "violated")


def load_config(path):
    """
    Read a RunConfig from a JSON file

    Args:
        path: Path to the config file

    Returns:
        RunConfig

    Raises:
        ConfigError: If the file is unreadable or has unknown keys
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return RunConfig.from_json(text)


def save_config(config, path):
    Path(path).write_text(config.to_json() + "\n")


def parse_override(item):
    """'key=value' -> (key, value); value parsed as JSON, else kept as a string"""
    key, sep, raw = item.partition("=")
    if not sep or not key.strip():
        raise ConfigError(f"override {item!r} is not of the form key=value")
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    return key.strip(), value


def require_number(value, name, integer=False):
    """Raise ConfigError unless value is a finite real (an integer if asked)"""
    kind = numbers.Integral if integer else numbers.Real
    if isinstance(value, bool) or not isinstance(value, kind):
        expected = "an integer" if integer else "a number"
        raise ConfigError(f"{name} must be {expected}, got {value!r}")
    if not math.isfinite(value):
        raise ConfigError(f"{name} must be finite, got {value!r}")
    return value


def apply_overrides(config, overrides):
    """Apply a list of 'key=value' strings to a RunConfig"""
    changes = dict(parse_override(item) for item in overrides or ())
    known = {f.name for f in fields(RunConfig)}
    unknown = set(changes) - known
    if unknown:
        raise ConfigError(f"unknown override keys: {sorted(unknown)}")
    return replace(config, **changes)


def schedule_from_spec(spec):
    """harmonic(a), capped_harmonic(a,gmax) or constant(g)"""
    if isinstance(spec, StepSchedule):
        return spec
    name, args = split_spec(spec)
    try:
        values = [float(a) for a in args]
        if name == "harmonic" and len(values) <= 1:
            return StepSchedule.harmonic(*values)
        if name == "capped_harmonic" and len(values) == 2:
            return StepSchedule.capped_harmonic(*values)
        if name == "constant" and len(values) == 1:
            return StepSchedule.constant(*values)
    except ValueError as exc:
        raise ConfigError(f"bad schedule spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown schedule spec {spec!r}")


def retention_from_spec(spec, n, iterations):
    """
    all, every(m), reservoir(c) or auto

    auto keeps everything when the run holds at most MAX_POOL_POINTS particle
    positions, and thins to every(m) otherwise.
    """
    name, args = split_spec(spec)
    try:
        if name == "all" and not args:
            return Retention("all")
        if name == "every" and len(args) == 1 and int(args[0]) >= 1:
            return Retention("every", every=int(args[0]))
        if name == "reservoir" and len(args) == 1 and int(args[0]) >= 1:
            return Retention("reservoir", capacity=int(args[0]))
    except ValueError as exc:
        raise ConfigError(f"bad retention spec {spec!r}: {exc}") from exc
    if name == "auto" and not args:
        total = n * (iterations + 1)
        if total <= MAX_POOL_POINTS:
            return Retention("all")
        return Retention("every", every=math.ceil(total / MAX_POOL_POINTS))
    raise ConfigError(f"unknown retention spec {spec!r}")


def initial_cloud(spec, n, d, target, rng):
    """
    Initial (n, d) positions from an init spec

    gauss: i.i.d. N(0, I); gauss(s): i.i.d. N(0, s^2 I); target: exact target samples.
    """
    name, args = split_spec(spec)
    if name == "gauss" and len(args) <= 1:
        try:
            scale = float(args[0]) if args else 1.0
        except ValueError as exc:
            raise ConfigError(f"bad init spec {spec!r}") from exc
        return scale * rng.standard_normal((n, d))
    if name == "target" and not args:
        return target.sample(rng, n)
    raise ConfigError(f"unknown init spec {spec!r}")


def init_positions(config, target, rng):
    return initial_cloud(config.init, config.n, config.d, target, rng)


def validate_config(config, probe=True):
    """
    Check a RunConfig and annotate the assumptions it satisfies

    Args:
        config: RunConfig
        probe: If True, run the finite-difference contract probes

    Returns:
        ValidatedConfig whose `assumptions` maps each assumption to one of
        "analytic", "verified", "violated" or "unverified"

    Raises:
        ConfigError: On non-positive n or d, negative lambda, unknown specs or
            a target whose dimension differs from d
    """
    for name in ("n", "d", "iterations", "record_every", "seed", "w2_samples", "run_id"):
        require_number(getattr(config, name), name, integer=True)
    if config.w2_seed is not None:
        require_number(config.w2_seed, "w2_seed", integer=True)
    require_number(config.lam, "lam")
    for name in ("kernel", "target", "schedule", "init", "retention"):
        if not isinstance(getattr(config, name), str):
            raise ConfigError(f"{name} must be a spec string, got {getattr(config, name)!r}")
    if config.n < 1:
        raise ConfigError("n must be a positive integer")
    if config.d < 1:
        raise ConfigError("d must be a positive integer")
    if not config.lam >= 0:
        raise ConfigError("lambda must be non-negative")
    if config.iterations < 0:
        raise ConfigError("iterations must be a non-negative integer")
    if config.record_every < 1:
        raise ConfigError("record_every must be at least 1")
    unknown = set(config.metrics) - set(METRIC_NAMES)
    if unknown:
        raise ConfigError(f"unknown metrics {sorted(unknown)}; choose from {METRIC_NAMES}")

    target = target_from_spec(config.target)
    if target.dimension != config.d:
        raise ConfigError(
            f"dimension mismatch: target {target.name} has d={target.dimension}, config has d={config.d}"
        )
    name, _ = split_spec(config.init)
    if name not in ("gauss", "target"):
        raise ConfigError(f"unknown init spec {config.init!r}")
    if name == "target" and not target.can_sample:
        raise ConfigError(f"init 'target' needs a sampleable target, {target.name} is not")
    if ("w2" in config.metrics or "averaged" in config.metrics) and not target.can_sample:
        raise ConfigError(f"W2 diagnostics need a sampleable target, {target.name} is not")
    if "proxy" in config.metrics and not target.has_moments:
        raise ConfigError(f"proxy KL needs a target with analytic moments, {target.name} has none")

    kernel = kernel_from_spec(config.kernel)
    if isinstance(kernel, MedianRBFKernel) and config.n < 2:
        raise ConfigError("rbf(median) needs at least two particles")
    schedule = schedule_from_spec(config.schedule)
    retention = retention_from_spec(config.retention, config.n, config.iterations)

    assumptions = {
        "assumption-1": "analytic" if schedule.vanishes else "violated",
        "gaussian-noise": "analytic",
        "finite-fourth-moment": "analytic",
        "lsi": "analytic" if target.lsi_constant else "unverified",
    }
    if not schedule.vanishes:
        logger.warning("schedule %s does not vanish: assumption-1-violated", schedule.spec)

    reports = ()
    if probe:
        rng = RngStream(config.seed, config.run_id).generator(PROBES)
        target_report = check_target(target, rng)
        kernel_report = check_kernel(kernel, config.d, rng)
        reports = (target_report, kernel_report)
        assumptions["assumption-2-target"] = "verified" if target_report.passed else "violated"
        assumptions["assumption-2-kernel"] = "verified" if kernel_report.passed else "violated"
        for report in reports:
            if not report.passed:
                logger.warning("%s failed contract probes: %s", report.subject, report.failures())
    else:
        assumptions["assumption-2-target"] = "unverified"
        assumptions["assumption-2-kernel"] = "unverified"

    return ValidatedConfig(config, target, kernel, schedule, retention, assumptions, reports)

