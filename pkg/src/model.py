"""
Domain Model

Value objects shared by the sampler, the diagnostics and the reference flow:
ensembles of particles, target and kernel models, step-size schedules and
weighted point pools. All of them are immutable once built.
"""
import math
from abc import ABC, abstractmethod
from dataclasses import dataclass, field
from typing import Callable, Optional, Tuple

import numpy as np

from src.errors import ConfigError


def _frozen_array(values, ndim):
    array = np.array(values, dtype=float)
    if array.ndim != ndim:
        raise ConfigError(f"expected a {ndim}-d array, got shape {array.shape}")
    array.setflags(write=False)
    return array


@dataclass(frozen=True, eq=False)
class Ensemble:
    """n particle positions in R^d at one iteration"""

    positions: np.ndarray
    iteration: int = 0
    elapsed_time: float = 0.0

    def __post_init__(self):
        positions = _frozen_array(self.positions, 2)
        n, d = positions.shape
        if n < 1 or d < 1:
            raise ConfigError(f"ensemble needs n >= 1 and d >= 1, got {positions.shape}")
        if not np.all(np.isfinite(positions)):
            raise ConfigError("ensemble positions must be finite")
        if self.iteration < 0:
            raise ConfigError("iteration must be non-negative")
        object.__setattr__(self, "positions", positions)

    @property
    def n(self):
        return self.positions.shape[0]

    @property
    def d(self):
        return self.positions.shape[1]


@dataclass(frozen=True)
class TargetModel:
    """
    Target pi proportional to exp(-F)

    potential and gradient act row-wise on an (m, d) array; the pointwise
    helpers below accept a single d-vector too.
    """

    name: str
    dimension: int
    potential_fn: Callable[[np.ndarray], np.ndarray]
    gradient_fn: Callable[[np.ndarray], np.ndarray]
    analytic_moments: Optional[Tuple[np.ndarray, np.ndarray]] = None
    lsi_constant: Optional[float] = None
    sampler: Optional[Callable[[np.random.Generator, int], np.ndarray]] = None
    dissipativity: Optional[Tuple[float, float, float]] = None

    def potential(self, x):
        x = np.asarray(x, dtype=float)
        values = self.potential_fn(np.atleast_2d(x))
        return float(values[0]) if x.ndim == 1 else values

    def gradient(self, x):
        x = np.asarray(x, dtype=float)
        values = self.gradient_fn(np.atleast_2d(x))
        return values[0] if x.ndim == 1 else values

    def score(self, x):
        """s(x) = -grad F(x)"""
        return -self.gradient(x)

    @property
    def has_moments(self):
        return self.analytic_moments is not None

    @property
    def can_sample(self):
        return self.sampler is not None

    def sample(self, rng, m):
        if self.sampler is None:
            raise ConfigError(f"target {self.name} cannot be sampled exactly")
        return self.sampler(rng, m)


class KernelModel(ABC):
    """
    Scalar positive-definite kernel K(x, y) with the derivatives the update
    rule and the Stein kernel need.

    Pointwise methods take d-vectors; the matrix methods take (n, d) and
    (m, d) arrays and are what the inner loops use.
    """

    name = "kernel"

    @abstractmethod
    def eval(self, x, y):
        """K(x, y)"""

    @abstractmethod
    def grad2(self, x, y):
        """Gradient of K in its second argument"""

    @abstractmethod
    def mixed_trace(self, x, y):
        """Trace of the cross second-derivative matrix d2K / dx dy"""

    @abstractmethod
    def gram(self, X, Y):
        """(n, m) matrix of K(X_i, Y_j)"""

    @abstractmethod
    def grad2_matrix(self, X, Y):
        """(n, m, d) array of grad2(X_i, Y_j)"""

    @abstractmethod
    def mixed_trace_matrix(self, X, Y):
        """(n, m) matrix of mixed_trace(X_i, Y_j)"""

    def stein_matrix(self, X, SX, Y=None, SY=None):
        """Stein kernel u(X_i, Y_j) given the scores SX = s(X) and SY = s(Y)"""
        if Y is None:
            Y, SY = X, SX
        return (
            (SX @ SY.T) * self.gram(X, Y)
            + np.einsum("ia,ija->ij", SX, self.grad2_matrix(X, Y))
            + np.einsum("ja,jia->ij", SY, self.grad2_matrix(Y, X))
            + self.mixed_trace_matrix(X, Y)
        )

    def bound(self):
        """Upper bound on |K|, used by the boundedness probe"""
        return math.inf

    def for_points(self, X):
        """Kernel to use on the snapshot X (data-driven bandwidths override this)"""
        return self


@dataclass(frozen=True)
class StepSchedule:
    """
    Step-size rule gamma_k, k >= 1

    harmonic: a / k; capped_harmonic: min(gmax, a / k); constant: g.
    A constant schedule never tends to zero and is flagged as such.
    """

    rule: str
    a: float = 10.0
    gamma_max: float = math.inf
    gamma: float = 0.0

    RULES = ("harmonic", "capped_harmonic", "constant")

    def __post_init__(self):
        if self.rule not in self.RULES:
            raise ConfigError(f"unknown schedule rule {self.rule!r}")
        if self.rule == "constant":
            if not self.gamma > 0:
                raise ConfigError("constant step size must be positive")
        elif not self.a > 0:
            raise ConfigError("harmonic coefficient must be positive")
        if self.rule == "capped_harmonic" and not self.gamma_max > 0:
            raise ConfigError("step cap must be positive")

    @classmethod
    def harmonic(cls, a=10.0):
        return cls("harmonic", a=a)

    @classmethod
    def capped_harmonic(cls, a, gamma_max):
        return cls("capped_harmonic", a=a, gamma_max=gamma_max)

    @classmethod
    def constant(cls, gamma):
        return cls("constant", gamma=gamma)

    def step(self, k):
        """gamma_k for k >= 1"""
        if k < 1:
            raise ConfigError("step sizes are indexed from k = 1")
        if self.rule == "constant":
            return self.gamma
        if self.rule == "capped_harmonic":
            return min(self.gamma_max, self.a / k)
        return self.a / k

    @property
    def vanishes(self):
        """gamma_k -> 0 and sum gamma_k = inf"""
        return self.rule != "constant"

    @property
    def spec(self):
        if self.rule == "constant":
            return f"constant({self.gamma!r})"
        if self.rule == "capped_harmonic":
            return f"capped_harmonic({self.a!r},{self.gamma_max!r})"
        return f"harmonic({self.a!r})"


@dataclass(frozen=True, eq=False)
class WeightedPool:
    """Discrete measure: points with positive weights summing to one"""

    points: np.ndarray
    weights: np.ndarray
    approximate: bool = False
    note: str = field(default="", compare=False)

    def __post_init__(self):
        points = _frozen_array(self.points, 2)
        weights = _frozen_array(self.weights, 1)
        if points.shape[0] == 0:
            raise ConfigError("pool is empty")
        if weights.shape[0] != points.shape[0]:
            raise ConfigError("one weight per point is required")
        if not np.all(np.isfinite(points)):
            raise ConfigError("pool points must be finite")
        if np.any(weights <= 0):
            raise ConfigError("pool weights must be positive")
        if abs(weights.sum() - 1.0) > 1e-12:
            weights = weights / weights.sum()
            weights.setflags(write=False)
        object.__setattr__(self, "points", points)
        object.__setattr__(self, "weights", weights)

    @classmethod
    def uniform(cls, points):
        points = np.asarray(points, dtype=float)
        return cls(points, np.full(points.shape[0], 1.0 / points.shape[0]))

    @property
    def size(self):
        return self.points.shape[0]

    @property
    def d(self):
        return self.points.shape[1]

    @property
    def is_uniform(self):
        return bool(np.all(self.weights == self.weights[0]))

    def mean(self):
        return self.weights @ self.points

    def covariance(self):
        centered = self.points - self.mean()
        return (centered * self.weights[:, None]).T @ centered


def as_pool(points_or_pool):
    """Accept an (n, d) array, an Ensemble or a WeightedPool; 1-d arrays are n scalar samples"""
    if isinstance(points_or_pool, WeightedPool):
        return points_or_pool
    if isinstance(points_or_pool, Ensemble):
        return WeightedPool.uniform(points_or_pool.positions)
    points = np.asarray(points_or_pool, dtype=float)
    if points.ndim == 1:
        points = points[:, None]
    return WeightedPool.uniform(points)


def split_spec(text):
    """
    Split a spec string such as "imq(1, 0.5)" into ("imq", ["1", "0.5"])

    A bare name has no arguments.
    """
    text = str(text).strip()
    if "(" not in text:
        return text, []
    if not text.endswith(")"):
        raise ConfigError(f"malformed spec string {text!r}")
    name, _, rest = text.partition("(")
    inner = rest[:-1].strip()
    args = [part.strip() for part in inner.split(",")] if inner else []
    return name.strip(), args
