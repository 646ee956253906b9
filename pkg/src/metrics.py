"""
Metrics

Diagnostics of particle clouds against a target:

- DAMV, the dimension-averaged marginal variance;
- KSD^2, the Stein Fisher information of a discrete measure (exact double sum
  of the Stein kernel);
- W2, exact on small supports, sliced above the support cap, and against a
  fresh i.i.d. target cloud;
- Gaussian-proxy KL and Fisher information, obtained by fitting a Gaussian to
  the cloud. These are proxies and are labeled as such everywhere.
"""
import logging
from dataclasses import asdict, dataclass, fields
from typing import Optional

import numpy as np
import pandas as pd
from scipy import sparse
from scipy.optimize import linear_sum_assignment, linprog
from scipy.spatial.distance import cdist

from config.defaults import SLICED_PROJECTIONS, W2_SUPPORT_CAP
from src.errors import MetricError, SupportCapError
from src.model import WeightedPool, as_pool
from src.rng import PROJECTIONS, TARGET_SAMPLES, RngStream

logger = logging.getLogger(__name__)

KSD_FLOOR = -1e-9
RIDGE = 1e-8


@dataclass(frozen=True)
class MetricRecord:
    """One row of diagnostics for one recorded iteration of one run"""

    run_id: int
    d: int
    n: int
    lam: float
    kernel: str
    seed: int
    iteration: int
    elapsed_time: float
    damv: Optional[float]
    ksd_squared: Optional[float] = None
    w2_to_target: Optional[float] = None
    proxy_kl: Optional[float] = None
    proxy_fisher: Optional[float] = None
    fourth_moment: Optional[float] = None
    damv_averaged: Optional[float] = None
    w2_averaged: Optional[float] = None

    def __post_init__(self):
        if self.ksd_squared is not None and self.ksd_squared < KSD_FLOOR:
            raise MetricError(f"ksd_squared {self.ksd_squared} below numerical floor")


METRIC_COLUMNS = tuple(f.name for f in fields(MetricRecord))


def records_frame(records):
    """DataFrame with the documented column order"""
    return pd.DataFrame([asdict(r) for r in records], columns=list(METRIC_COLUMNS))


def write_csv(frame, path):
    """Write a frame with 17 significant digits and unix line endings"""
    frame.to_csv(path, index=False, float_format="%.17g", na_rep="", lineterminator="\n")


def write_metrics_csv(records, path):
    write_csv(records_frame(records), path)


def damv(points, ddof=1):
    """
    Dimension-averaged marginal variance

    Args:
        points: (n, d) array (n >= 2) or WeightedPool
        ddof: 1 for the unbiased estimator, 0 for the plug-in one

    Returns:
        Mean over coordinates of the per-coordinate variance. Weighted pools
        use the reliability-weights correction, which reduces to n - 1 for
        uniform weights.
    """
    if isinstance(points, WeightedPool):
        pool = points
        if pool.size < 2:
            raise MetricError("DAMV needs at least two points")
        variance = np.diag(pool.covariance())
        if ddof:
            variance = variance / (1.0 - float(pool.weights @ pool.weights))
        return float(variance.mean())
    points = np.asarray(points, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    if points.shape[0] < 2:
        raise MetricError("DAMV needs at least two points")
    return float(np.var(points, axis=0, ddof=ddof).mean())


def fourth_moment(points):
    """Particle mean of |x|^4"""
    points = np.atleast_2d(np.asarray(points, dtype=float))
    sq = np.einsum("ij,ij->i", points, points)
    return float(np.mean(sq * sq))


def ksd_squared(points, target, kernel, statistic="v"):
    """
    Squared kernel Stein discrepancy of a discrete measure

    KSD^2 = sum_ij w_i w_j u(x_i, x_j) with the Stein kernel u built from
    K, grad2 K, the mixed trace and the score s = -grad F.

    Args:
        points: (n, d) array or WeightedPool
        target: TargetModel
        kernel: KernelModel
        statistic: "v" (diagonal included, the Stein Fisher information of the
            discrete measure) or "u" (diagonal excluded, uniform weights only)

    Returns:
        KSD^2; V-statistics in [-1e-9, 0) are clamped to 0

    Raises:
        MetricError: If a V-statistic falls below -1e-9, which means a kernel
            derivative is wrong
    """
    pool = as_pool(points)
    X = pool.points
    kernel = kernel.for_points(X)
    scores = target.score(X)
    stein = kernel.stein_matrix(X, scores)
    if statistic == "u":
        if not pool.is_uniform or pool.size < 2:
            raise MetricError("U-statistic KSD needs at least two uniformly weighted points")
        n = pool.size
        return float((stein.sum() - np.trace(stein)) / (n * (n - 1)))
    if statistic != "v":
        raise MetricError(f"unknown KSD statistic {statistic!r}")
    value = float(pool.weights @ stein @ pool.weights)
    if value < KSD_FLOOR:
        raise MetricError(f"negative KSD^2 {value:g}: check the kernel derivatives")
    return max(value, 0.0)


def w2_squared_1d(xa, wa, xb, wb):
    """Squared W2 between weighted 1-d measures via their quantile functions"""
    ia = np.argsort(xa, kind="stable")
    ib = np.argsort(xb, kind="stable")
    xa, wa, xb, wb = xa[ia], wa[ia], xb[ib], wb[ib]
    ca = np.cumsum(wa)
    cb = np.cumsum(wb)
    ca[-1] = cb[-1] = 1.0
    levels = np.union1d(ca, cb)
    widths = np.diff(np.concatenate(([0.0], levels)))
    # quantile at the right end of each level interval
    qa = xa[np.minimum(np.searchsorted(ca, levels, side="left"), xa.size - 1)]
    qb = xb[np.minimum(np.searchsorted(cb, levels, side="left"), xb.size - 1)]
    return float(np.sum(widths * (qa - qb) ** 2))


def w2_exact(pool_a, pool_b, cap=W2_SUPPORT_CAP):
    """
    Exact W2 between two discrete measures

    Uniform pools of equal size are solved as an assignment problem; anything
    else as a transport linear program.

    Args:
        pool_a: WeightedPool or (n, d) array
        pool_b: WeightedPool or (m, d) array
        cap: Largest combined support size accepted

    Returns:
        W2 distance

    Raises:
        SupportCapError: If n + m exceeds cap; use sliced_w2 instead
    """
    a = as_pool(pool_a)
    b = as_pool(pool_b)
    if a.d != b.d:
        raise MetricError("pools live in different dimensions")
    if a.size + b.size > cap:
        raise SupportCapError(
            f"support size {a.size + b.size} exceeds cap {cap}; use sliced_w2 or a 1-d estimator"
        )
    cost = cdist(a.points, b.points, "sqeuclidean")
    if a.is_uniform and b.is_uniform and a.size == b.size:
        rows, cols = linear_sum_assignment(cost)
        total = float(cost[rows, cols].sum() / a.size)
    else:
        total = _transport_lp(cost, a.weights, b.weights)
    return float(np.sqrt(max(total, 0.0)))


def _transport_lp(cost, wa, wb):
    n, m = cost.shape
    # row sums then column sums of the n x m plan, flattened row-major
    rows = sparse.kron(sparse.eye(n), np.ones((1, m)))
    cols = sparse.kron(np.ones((1, n)), sparse.eye(m))
    constraints = sparse.vstack([rows, cols]).tocsr()
    result = linprog(
        cost.ravel(),
        A_eq=constraints,
        b_eq=np.concatenate([wa, wb]),
        bounds=(0, None),
        method="highs",
    )
    if not result.success:
        raise MetricError(f"transport LP failed: {result.message}")
    return float(result.fun)


def random_projections(d, count, rng):
    """count unit vectors in R^d, one per row"""
    directions = rng.standard_normal((count, d))
    return directions / np.linalg.norm(directions, axis=1, keepdims=True)


def sliced_w2(pool_a, pool_b, projections=SLICED_PROJECTIONS, seed=0):
    """
    Sliced W2: root of the mean squared 1-d W2 over random directions

    Args:
        pool_a: WeightedPool or array
        pool_b: WeightedPool or array
        projections: Number of random directions
        seed: Seed of the direction stream

    Returns:
        Sliced W2 estimate
    """
    a = as_pool(pool_a)
    b = as_pool(pool_b)
    if a.d != b.d:
        raise MetricError("pools live in different dimensions")
    directions = random_projections(a.d, projections, RngStream(seed).generator(PROJECTIONS))
    pa = a.points @ directions.T
    pb = b.points @ directions.T
    total = sum(
        w2_squared_1d(pa[:, j], a.weights, pb[:, j], b.weights) for j in range(projections)
    )
    return float(np.sqrt(total / projections))


@dataclass(frozen=True)
class W2Estimate:
    """W2 to a target, with what is needed to reproduce it"""

    value: float
    samples: int
    seed: int
    method: str

    def __float__(self):
        return self.value


def target_cloud(target, m, seed):
    """m i.i.d. target samples from the seeded target-sample stream"""
    return target.sample(RngStream(seed).generator(TARGET_SAMPLES), m)


def w2_to_target(points, target, m, seed, cap=W2_SUPPORT_CAP, projections=SLICED_PROJECTIONS):
    """
    W2 between a cloud and m fresh target samples

    The estimate is biased upward for finite m: even exact target samples are
    at positive distance from pi.

    Args:
        points: (n, d) array or WeightedPool
        target: Sampleable TargetModel
        m: Number of target samples
        seed: Seed of the target sample stream

    Returns:
        W2Estimate; exact below the support cap, sliced above it
    """
    if not target.can_sample:
        raise MetricError(f"target {target.name} cannot be sampled; no reference chain available")
    pool = as_pool(points)
    cloud = target_cloud(target, m, seed)
    if pool.size + m <= cap:
        return W2Estimate(w2_exact(pool, cloud, cap=cap), m, seed, "exact")
    return W2Estimate(sliced_w2(pool, cloud, projections=projections, seed=seed), m, seed, "sliced")


@dataclass(frozen=True)
class ProxyDiagnostics:
    """Gaussian-proxy KL and Fisher information; not the true quantities"""

    proxy_kl: float
    proxy_fisher: float
    ridge_applied: bool = False


def gaussian_proxy_kl(points, target):
    """
    Fit N(m, S) to the cloud and compare it with the Gaussian target N(mu, Sigma)

    KL(N(m,S) | N(mu,Sigma)) = (tr(Sigma^-1 S) + (mu-m)' Sigma^-1 (mu-m) - d
                                + log det Sigma - log det S) / 2
    I(N(m,S) | N(mu,Sigma))  = tr(A S A) + |Sigma^-1 (m - mu)|^2,
                               A = Sigma^-1 - S^-1

    Args:
        points: (n, d) array or WeightedPool; moments are the weighted plug-in
            ones (divide by the total weight)
        target: TargetModel with analytic moments

    Returns:
        ProxyDiagnostics; ridge_applied is set when S was singular and 1e-8 I
        was added
    """
    if not target.has_moments:
        raise MetricError(f"target {target.name} has no analytic moments for the Gaussian proxy")
    pool = as_pool(points)
    mu, sigma = (np.atleast_1d(v).astype(float) for v in target.analytic_moments)
    sigma = np.atleast_2d(sigma)
    d = pool.d
    m = pool.mean()
    S = np.atleast_2d(pool.covariance())

    ridge = False
    sign, logdet_s = np.linalg.slogdet(S)
    if sign <= 0 or not np.isfinite(logdet_s) or np.linalg.cond(S) > 1e12:
        S = S + RIDGE * np.eye(d)
        sign, logdet_s = np.linalg.slogdet(S)
        ridge = True
        logger.debug("sample covariance singular: ridge %g applied", RIDGE)
    _, logdet_sigma = np.linalg.slogdet(sigma)

    sigma_inv = np.linalg.inv(sigma)
    s_inv = np.linalg.inv(S)
    delta = m - mu
    kl = 0.5 * (np.trace(sigma_inv @ S) + delta @ sigma_inv @ delta - d + logdet_sigma - logdet_s)
    A = sigma_inv - s_inv
    shift = sigma_inv @ delta
    fisher = np.trace(A @ S @ A) + shift @ shift
    return ProxyDiagnostics(max(float(kl), 0.0), max(float(fisher), 0.0), ridge)


def kl_noise_level(d, n):
    """
    Monte Carlo noise level of the proxy KL for n exact target samples

    The fitted KL of exact samples is roughly chi2(nu) / (2n) with
    nu = d (d + 3) / 2; the level is its mean plus two standard deviations.
    """
    nu = d * (d + 3) / 2.0
    return (nu + 2.0 * np.sqrt(2.0 * nu)) / (2.0 * n)
