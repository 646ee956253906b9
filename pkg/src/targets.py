"""
Targets

Built-in potentials F for pi proportional to exp(-F). Gaussian targets carry
their moments and log-Sobolev constant; the mixture only supplies F (without
its normalizing constant) and an exact sampler.

The dissipativity triple (c, C, radius) states c |x|^2 - C <= F(x), with the
bound being informative beyond `radius`.
"""
import json
import logging
from pathlib import Path

import numpy as np
from scipy.special import logsumexp, softmax

from src.errors import ConfigError
from src.model import TargetModel, split_spec

logger = logging.getLogger(__name__)


def standard_gaussian(d):
    """
    Standard Gaussian N(0, I) in dimension d

    Args:
        d: Dimension, d >= 1

    Returns:
        TargetModel with F(x) = |x|^2 / 2, moments (0, I) and LSI constant 1
    """
    d = int(d)
    if d < 1:
        raise ConfigError("dimension must be at least 1")
    return TargetModel(
        name=f"gauss({d})",
        dimension=d,
        potential_fn=lambda X: 0.5 * np.einsum("ij,ij->i", X, X),
        gradient_fn=lambda X: np.array(X, dtype=float),
        analytic_moments=(np.zeros(d), np.eye(d)),
        lsi_constant=1.0,
        sampler=lambda rng, m: rng.standard_normal((m, d)),
        dissipativity=(0.5, 0.0, 0.0),
    )


def anisotropic_gaussian(variances):
    """
    Centered Gaussian with diagonal covariance

    Args:
        variances: Diagonal of the covariance, all entries positive

    Returns:
        TargetModel with F(x) = x' S^-1 x / 2 and LSI constant 1 / max(variances)
    """
    variances = np.asarray(variances, dtype=float).ravel()
    if variances.size == 0 or np.any(~(variances > 0)):
        raise ConfigError("all variances must be positive")
    d = variances.size
    inverse = 1.0 / variances
    scales = np.sqrt(variances)
    vmax = float(variances.max())
    return TargetModel(
        name="gauss_diag(" + ",".join(repr(float(v)) for v in variances) + ")",
        dimension=d,
        potential_fn=lambda X: 0.5 * (X * X) @ inverse,
        gradient_fn=lambda X: X * inverse,
        analytic_moments=(np.zeros(d), np.diag(variances)),
        lsi_constant=1.0 / vmax,
        sampler=lambda rng, m: rng.standard_normal((m, d)) * scales,
        dissipativity=(0.5 / vmax, 0.0, 0.0),
    )


def gaussian_mixture(centers, weights, variance, name=None):
    """
    Isotropic Gaussian mixture sum_j w_j N(c_j, variance I)

    F(x) = -logsumexp_j(log w_j - |x - c_j|^2 / (2 variance)); the
    normalizing constant is dropped since only grad F and differences of F
    are ever used.

    Args:
        centers: (m, d) component means
        weights: m positive weights summing to one
        variance: Common component variance

    Returns:
        TargetModel without analytic moments
    """
    centers = np.atleast_2d(np.asarray(centers, dtype=float))
    weights = np.asarray(weights, dtype=float).ravel()
    variance = float(variance)
    if centers.size == 0 or weights.size == 0:
        raise ConfigError("mixture needs at least one component")
    if weights.size != centers.shape[0]:
        raise ConfigError("one weight per center is required")
    if np.any(~(weights > 0)) or abs(weights.sum() - 1.0) > 1e-9:
        raise ConfigError("mixture weights must be positive and sum to 1")
    if not variance > 0:
        raise ConfigError("mixture variance must be positive")
    d = centers.shape[1]
    log_weights = np.log(weights)
    sigma = np.sqrt(variance)

    def log_components(X):
        sq = (
            np.einsum("ij,ij->i", X, X)[:, None]
            - 2.0 * X @ centers.T
            + np.einsum("ij,ij->i", centers, centers)[None, :]
        )
        return log_weights[None, :] - np.maximum(sq, 0.0) / (2.0 * variance)

    def potential(X):
        return -logsumexp(log_components(X), axis=1)

    def gradient(X):
        responsibilities = softmax(log_components(X), axis=1)
        return (X - responsibilities @ centers) / variance

    def sampler(rng, m):
        labels = rng.choice(weights.size, size=m, p=weights)
        return centers[labels] + sigma * rng.standard_normal((m, d))

    # F >= min_j |x - c_j|^2 / (2 var) >= |x|^2 / (4 var) - max |c_j|^2 / (2 var)
    max_center = float(np.max(np.einsum("ij,ij->i", centers, centers)))
    dissipativity = (
        1.0 / (4.0 * variance),
        max_center / (2.0 * variance),
        float(np.sqrt(2.0 * max_center)),
    )
    return TargetModel(
        name=name or f"mix({centers.shape[0]}x{d})",
        dimension=d,
        potential_fn=potential,
        gradient_fn=gradient,
        sampler=sampler,
        dissipativity=dissipativity,
    )


def load_mixture(path):
    """Read a mixture file: JSON with keys centers, weights, variance"""
    path = Path(path)
    try:
        data = json.loads(path.read_text())
    except (OSError, json.JSONDecodeError) as exc:
        raise ConfigError(f"cannot read mixture file {path}: {exc}") from exc
    missing = {"centers", "weights", "variance"} - set(data)
    if missing:
        raise ConfigError(f"mixture file {path} lacks {sorted(missing)}")
    return gaussian_mixture(data["centers"], data["weights"], data["variance"], name=f"mix({path})")


def target_from_spec(spec):
    """
    Build a target from its spec string

    Accepted forms: gauss(d), gauss_diag(v1,...,vd), mix(path).
    """
    if isinstance(spec, TargetModel):
        return spec
    name, args = split_spec(spec)
    try:
        if name == "gauss" and len(args) == 1:
            return standard_gaussian(int(args[0]))
        if name == "gauss_diag" and args:
            return anisotropic_gaussian([float(a) for a in args])
    except ValueError as exc:
        raise ConfigError(f"bad target spec {spec!r}: {exc}") from exc
    if name == "mix" and len(args) == 1:
        return load_mixture(args[0])
    raise ConfigError(f"unknown target spec {spec!r}")
