"""
Dynamics

The noisy SVGD iteration

    x_i' = x_i - gamma/n sum_j (K(x_i, x_j) grad F(x_j) - grad2 K(x_i, x_j))
               - lam gamma grad F(x_i) + sqrt(2 lam gamma) xi_i

with every right-hand side read from the frozen pre-step snapshot, the run
loop, snapshot retention, piecewise-linear interpolation of the iterates and
the step-weighted averaged empirical measure. lam = 0 is plain SVGD and
consumes no randomness.
"""
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from src.errors import ConfigError, MetricError, RetentionError, StepBlowUpError
from src.metrics import (
    MetricRecord,
    damv,
    fourth_moment,
    gaussian_proxy_kl,
    ksd_squared,
    w2_to_target,
)
from src.model import Ensemble, WeightedPool
from src.rng import INIT, RESERVOIR, RngStream
from src.run_config import Retention, ValidatedConfig, init_positions, validate_config

logger = logging.getLogger(__name__)

TRAJECTORY_MAGIC = b"NSVGDTRJ"

# size cap of one (n, block, d) term array in the ordered drift sums
ORDERED_BLOCK_ELEMENTS = 1 << 21


def drift(i, ensemble, kernel, target):
    """
    Interaction drift of particle i on the snapshot

    Args:
        i: Particle index
        ensemble: Ensemble holding the iteration-k positions
        kernel: KernelModel
        target: TargetModel

    Returns:
        d-vector (1/n) sum_j [K(x_i, x_j) grad F(x_j) - grad2 K(x_i, x_j)]
    """
    X = ensemble.positions
    if not 0 <= i < ensemble.n:
        raise ConfigError(f"particle index {i} outside [0, {ensemble.n})")
    kernel = kernel.for_points(X)
    return interaction_sums(X[i : i + 1], X, target.gradient(X), kernel)[0] / ensemble.n


def interaction_sums(rows, positions, gradients, kernel):
    """
    sum_j [K(x_i, x_j) grad F(x_j) - grad2 K(x_i, x_j)] for every x_i in rows

    The j-terms are accumulated in increasing j, in blocks of rows, so the
    result does not depend on BLAS threading or on how the rows are split.
    """
    n, d = positions.shape
    out = np.empty((rows.shape[0], d))
    block = max(1, ORDERED_BLOCK_ELEMENTS // (n * d))
    for start in range(0, rows.shape[0], block):
        chunk = rows[start : start + block]
        weights = kernel.gram(chunk, positions)
        repulsion = kernel.grad2_matrix(chunk, positions)
        # (n, b, d) with j leading; accumulate adds the j slices strictly in order
        terms = weights.T[:, :, None] * gradients[:, None, :] - repulsion.transpose(1, 0, 2)
        out[start : start + block] = np.add.accumulate(terms, axis=0)[-1]
    return out


def drift_all(positions, kernel, target, gradients=None):
    """All n drifts at once; gradients may be passed in when already computed"""
    if gradients is None:
        gradients = target.gradient(positions)
    kernel = kernel.for_points(positions)
    return interaction_sums(positions, positions, gradients, kernel) / positions.shape[0]


def langevin_update(positions, drifts, gradients, gamma, lam, noise_rng, iteration):
    """
    Shared Euler update: interaction drift, Langevin drift and noise

    noise_rng is an RngStream; noise for particle i is keyed by (iteration, i).
    """
    updated = positions - gamma * drifts
    if lam > 0:
        n, d = positions.shape
        updated = updated - lam * gamma * gradients
        updated = updated + math.sqrt(2.0 * lam * gamma) * noise_rng.normals(iteration, n, d)
    bad = np.flatnonzero(~np.all(np.isfinite(updated), axis=1))
    if bad.size:
        raise StepBlowUpError(int(bad[0]), iteration)
    return updated


def noisy_svgd_step(ensemble, kernel, target, gamma, lam, rng):
    """
    One synchronous noisy SVGD iteration

    Args:
        ensemble: Ensemble at iteration k
        kernel: KernelModel
        target: TargetModel
        gamma: Step size gamma_{k+1} > 0, shared by drift and noise
        lam: Langevin weight lam >= 0
        rng: RngStream; noise for particle i is xi_{k+1}^i

    Returns:
        Ensemble at iteration k + 1 with elapsed_time advanced by gamma

    Raises:
        StepBlowUpError: If any coordinate becomes non-finite
    """
    if not gamma > 0:
        raise ConfigError("step size must be positive")
    if lam < 0:
        raise ConfigError("lambda must be non-negative")
    X = ensemble.positions
    iteration = ensemble.iteration + 1
    gradients = target.gradient(X)
    drifts = drift_all(X, kernel, target, gradients)
    updated = langevin_update(X, drifts, gradients, gamma, lam, rng, iteration)
    return Ensemble(updated, iteration, ensemble.elapsed_time + gamma)


@dataclass(frozen=True)
class Snapshot:
    """A retained ensemble and the step size that produced it (0 for the initial one)"""

    ensemble: Ensemble
    step: float

    @property
    def iteration(self):
        return self.ensemble.iteration

    @property
    def elapsed_time(self):
        return self.ensemble.elapsed_time


class Trajectory:
    """
    Ordered snapshots of a run under a retention policy

    The initial and the final ensemble are always retained. every(m) keeps
    iterations divisible by m; reservoir(c) keeps a uniform sample of c
    intermediate snapshots (algorithm R).
    """

    def __init__(self, retention=None, rng=None):
        self.retention = retention or Retention("all")
        self._rng = rng
        self._kept = []
        self._last = None
        self._seen = 0
        if self.retention.policy == "reservoir" and rng is None:
            raise ConfigError("reservoir retention needs a random generator")

    def append(self, ensemble, step):
        snapshot = Snapshot(ensemble, float(step))
        if self._last is not None and ensemble.iteration <= self._last.iteration:
            raise RetentionError("snapshot iterations must strictly increase")
        if self._last is not None and ensemble.elapsed_time < self._last.elapsed_time:
            raise RetentionError("elapsed time must not decrease")
        previous, self._last = self._last, snapshot
        if previous is None:
            self._kept.append(snapshot)
            return
        # the previous "last" is no longer forced; decide whether it stays
        if previous.iteration != 0 and not self._keep(previous):
            self._kept.remove(previous)
        self._kept.append(snapshot)

    def _keep(self, snapshot):
        policy = self.retention.policy
        if policy == "all":
            return True
        if policy == "every":
            return snapshot.iteration % self.retention.every == 0
        # reservoir: snapshot already sits in _kept as the forced last entry
        self._seen += 1
        reservoir = [s for s in self._kept if s.iteration != 0 and s is not snapshot]
        if len(reservoir) < self.retention.capacity:
            return True
        slot = int(self._rng.integers(0, self._seen))
        if slot < self.retention.capacity:
            self._kept.remove(reservoir[slot])
            return True
        return False

    @property
    def snapshots(self):
        return sorted(self._kept, key=lambda s: s.iteration)

    @property
    def final(self):
        return self._last

    @property
    def initial(self):
        return self.snapshots[0]

    def __len__(self):
        return len(self._kept)

    def __iter__(self):
        return iter(self.snapshots)

    def times(self):
        return np.array([s.elapsed_time for s in self.snapshots])


def interpolate(trajectory, t):
    """
    Piecewise-linear interpolation of the iterates at time t

    X(t) = X_k + (t - tau_k) / gamma_{k+1} (X_{k+1} - X_k) for t in [tau_k, tau_{k+1}]

    Args:
        trajectory: Trajectory retaining every snapshot
        t: Time in [0, final elapsed_time]

    Returns:
        (n, d) array; exactly X_k at a knot tau_k

    Raises:
        RetentionError: If snapshots were thinned or t lies outside the trajectory
    """
    if not trajectory.retention.keeps_all:
        raise RetentionError("interpolation needs retention 'all'")
    snapshots = trajectory.snapshots
    times = np.array([s.elapsed_time for s in snapshots])
    if t < 0 or t > times[-1]:
        raise RetentionError(f"t = {t} outside [0, {times[-1]}]")
    k = int(np.searchsorted(times, t, side="right")) - 1
    current = snapshots[k].ensemble.positions
    if times[k] == t or k + 1 == len(snapshots):
        return np.array(current)
    following = snapshots[k + 1]
    fraction = (t - times[k]) / following.step
    return current + fraction * (following.ensemble.positions - current)


def averaged_measure(trajectory, up_to_k):
    """
    Step-weighted average of the empirical measures of iterations 1..k

    Every particle of snapshot i gets weight gamma_i / (n sum_j gamma_j).
    Under every(m) each retained snapshot stands for the block of steps since
    the previous retained one; under reservoir(c) the sampled snapshots keep
    their own gamma_i and the final snapshot, retained unconditionally, is left
    out. Both cases are flagged approximate.

    Args:
        trajectory: Trajectory
        up_to_k: Last iteration included

    Returns:
        WeightedPool

    Raises:
        RetentionError: If no snapshot in 1..k is available
    """
    retained = [s for s in trajectory.snapshots if 1 <= s.iteration <= up_to_k]
    if not retained:
        raise RetentionError(f"no snapshots in iterations 1..{up_to_k}")
    final = trajectory.final
    if up_to_k > final.iteration:
        raise RetentionError(f"trajectory ends at iteration {final.iteration} < {up_to_k}")

    policy = trajectory.retention
    if policy.keeps_all:
        weights = [s.step for s in retained]
        approximate, note = False, ""
    elif policy.policy == "every":
        everything = trajectory.snapshots
        previous = {s.iteration: p for p, s in zip(everything, everything[1:])}
        weights = [s.elapsed_time - previous[s.iteration].elapsed_time for s in retained]
        approximate, note = True, f"block weights under every({policy.every})"
    else:
        sampled = [s for s in retained if s.iteration != final.iteration]
        retained = sampled or retained
        weights = [s.step for s in retained]
        approximate, note = True, f"reservoir subsample of {len(retained)} snapshots"

    n = retained[0].ensemble.n
    points = np.concatenate([s.ensemble.positions for s in retained])
    particle_weights = np.repeat(np.asarray(weights, dtype=float), n)
    return WeightedPool(points, particle_weights / particle_weights.sum(), approximate, note)


def measure(ensemble, validated, trajectory=None):
    """MetricRecord for one ensemble under the config's metric selection"""
    config = validated.config
    wanted = set(config.metrics)
    X = ensemble.positions
    values = {"damv": damv(X) if ensemble.n >= 2 else None, "fourth_moment": fourth_moment(X)}
    if "ksd" in wanted:
        values["ksd_squared"] = ksd_squared(X, validated.target, validated.kernel)
    if "w2" in wanted:
        values["w2_to_target"] = w2_to_target(
            X, validated.target, config.w2_samples, config.effective_w2_seed
        ).value
    if "proxy" in wanted:
        proxy = gaussian_proxy_kl(X, validated.target)
        values["proxy_kl"] = proxy.proxy_kl
        values["proxy_fisher"] = proxy.proxy_fisher
    if "averaged" in wanted and trajectory is not None and ensemble.iteration >= 1:
        pool = averaged_measure(trajectory, ensemble.iteration)
        values["damv_averaged"] = damv(pool) if pool.size >= 2 else None
        values["w2_averaged"] = w2_to_target(
            pool, validated.target, config.w2_samples, config.effective_w2_seed
        ).value
    overflowed = sorted(
        name for name, value in values.items() if value is not None and not math.isfinite(value)
    )
    if overflowed:
        raise MetricError(
            f"non-finite {', '.join(overflowed)} at iteration {ensemble.iteration}; "
            "the particles have diverged, the step size is probably too large"
        )
    return MetricRecord(
        run_id=config.run_id,
        d=config.d,
        n=config.n,
        lam=config.lam,
        kernel=config.kernel,
        seed=config.seed,
        iteration=ensemble.iteration,
        elapsed_time=ensemble.elapsed_time,
        **values,
    )


def run(config):
    """
    Execute a full run

    Args:
        config: RunConfig or ValidatedConfig

    Returns:
        (Trajectory, list of MetricRecord); metrics are recorded at iteration
        0, every record_every iterations and at the final iteration

    Raises:
        StepBlowUpError: With the iteration at which a particle diverged
        MetricError: If a recorded metric overflows to a non-finite value
    """
    validated = config if isinstance(config, ValidatedConfig) else validate_config(config)
    config = validated.config
    stream = RngStream(config.seed, config.run_id)
    positions = init_positions(config, validated.target, stream.generator(INIT))
    ensemble = Ensemble(positions, 0, 0.0)
    trajectory = Trajectory(validated.retention, stream.generator(RESERVOIR))
    trajectory.append(ensemble, 0.0)
    records = [measure(ensemble, validated, trajectory)]
    logger.info(
        "run n=%d d=%d lam=%g kernel=%s schedule=%s K=%d seed=%d",
        config.n, config.d, config.lam, config.kernel, config.schedule, config.iterations, config.seed,
    )

    for k in range(1, config.iterations + 1):
        gamma = validated.schedule.step(k)
        ensemble = noisy_svgd_step(
            ensemble, validated.kernel, validated.target, gamma, config.lam, stream
        )
        trajectory.append(ensemble, gamma)
        if k % config.record_every == 0 or k == config.iterations:
            records.append(measure(ensemble, validated, trajectory))
            logger.debug("k=%d damv=%s", k, records[-1].damv)

    logger.info("run finished at tau=%g, final damv=%s", ensemble.elapsed_time, records[-1].damv)
    return trajectory, records


def save_trajectory(trajectory, path):
    """
    Binary layout: magic NSVGDTRJ, int64 n, d, count, then per snapshot
    int64 iteration, float64 elapsed_time, float64 step, float64 n*d positions
    (row-major). Little-endian throughout.
    """
    snapshots = trajectory.snapshots
    n, d = snapshots[0].ensemble.positions.shape
    with open(path, "wb") as handle:
        handle.write(TRAJECTORY_MAGIC)
        handle.write(np.array([n, d, len(snapshots)], dtype="<i8").tobytes())
        for snapshot in snapshots:
            handle.write(np.array([snapshot.iteration], dtype="<i8").tobytes())
            handle.write(np.array([snapshot.elapsed_time, snapshot.step], dtype="<f8").tobytes())
            handle.write(np.ascontiguousarray(snapshot.ensemble.positions, dtype="<f8").tobytes())


def load_trajectory(path):
    """Read a file written by save_trajectory into a Trajectory with retention 'all'"""
    data = Path(path).read_bytes()
    if data[:8] != TRAJECTORY_MAGIC:
        raise RetentionError(f"{path} is not a trajectory file")
    n, d, count = np.frombuffer(data, dtype="<i8", count=3, offset=8)
    offset = 32
    record = 8 + 16 + 8 * n * d
    if len(data) != offset + count * record:
        raise RetentionError(f"{path} is truncated")
    trajectory = Trajectory(Retention("all"))
    for _ in range(count):
        iteration = int(np.frombuffer(data, dtype="<i8", count=1, offset=offset)[0])
        elapsed, step = np.frombuffer(data, dtype="<f8", count=2, offset=offset + 8)
        positions = np.frombuffer(data, dtype="<f8", count=n * d, offset=offset + 24).reshape(n, d)
        trajectory.append(Ensemble(positions, iteration, float(elapsed)), float(step))
        offset += record
    return trajectory
