"""
Kernels

Radial kernels K(x, y) = kappa(|x - y|^2) with analytic derivatives:

    grad2(x, y)       = -2 kappa'(q) (x - y)
    mixed_trace(x, y) = -2 d kappa'(q) - 4 q kappa''(q)

where q = |x - y|^2. RBF and IMQ only differ in the profile kappa.
"""
import logging
import math

import numpy as np
from scipy.spatial.distance import cdist, pdist

from src.errors import ConfigError
from src.model import KernelModel, split_spec

logger = logging.getLogger(__name__)

BANDWIDTH_FLOOR = 1e-12


def _sqdist(X, Y):
    X = np.atleast_2d(np.asarray(X, dtype=float))
    Y = np.atleast_2d(np.asarray(Y, dtype=float))
    return cdist(X, Y, "sqeuclidean"), X, Y


class RadialKernel(KernelModel):
    """Kernel depending on |x - y|^2 only"""

    def profile(self, q):
        raise NotImplementedError

    def profile_d1(self, q):
        raise NotImplementedError

    def profile_d2(self, q):
        raise NotImplementedError

    def grad_bound(self):
        """Upper bound on |grad2 K|, also a Lipschitz constant in either argument"""
        return math.inf

    # pointwise

    def eval(self, x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return float(self.profile(diff @ diff))

    def grad2(self, x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        return -2.0 * self.profile_d1(diff @ diff) * diff

    def mixed_trace(self, x, y):
        diff = np.asarray(x, dtype=float) - np.asarray(y, dtype=float)
        q = diff @ diff
        return float(-2.0 * diff.size * self.profile_d1(q) - 4.0 * q * self.profile_d2(q))

    # pairwise

    def gram(self, X, Y):
        q, _, _ = _sqdist(X, Y)
        return self.profile(q)

    def _grad2_weights(self, q):
        return -2.0 * self.profile_d1(q)

    def grad2_matrix(self, X, Y):
        q, X, Y = _sqdist(X, Y)
        return self._grad2_weights(q)[:, :, None] * (X[:, None, :] - Y[None, :, :])

    def mixed_trace_matrix(self, X, Y):
        q, X, _ = _sqdist(X, Y)
        return -2.0 * X.shape[1] * self.profile_d1(q) - 4.0 * q * self.profile_d2(q)

    def stein_matrix(self, X, SX, Y=None, SY=None):
        """
        Stein kernel u(x_i, y_j) for score arrays SX = s(X), SY = s(Y)

        u(x, y) = s(x).s(y) K + s(x).grad2(x, y) + s(y).grad2(y, x) + mixed_trace
        """
        if Y is None:
            Y, SY = X, SX
        q, X, Y = _sqdist(X, Y)
        w = self._grad2_weights(q)
        # (s(x) - s(y)).(x - y), expanded to avoid an (n, m, d) tensor
        cross = (
            np.einsum("ij,ij->i", SX, X)[:, None]
            - SX @ Y.T
            - X @ SY.T
            + np.einsum("ij,ij->i", SY, Y)[None, :]
        )
        trace = -2.0 * X.shape[1] * self.profile_d1(q) - 4.0 * q * self.profile_d2(q)
        return (SX @ SY.T) * self.profile(q) + w * cross + trace


class RBFKernel(RadialKernel):
    """K(x, y) = exp(-|x - y|^2 / (2 h^2))"""

    def __init__(self, bandwidth=1.0):
        bandwidth = float(bandwidth)
        if not bandwidth > 0:
            raise ConfigError(f"bandwidth must be positive, got {bandwidth}")
        self.bandwidth = bandwidth
        self._inv = 1.0 / (2.0 * bandwidth**2)

    @property
    def name(self):
        return f"rbf({self.bandwidth!r})"

    def profile(self, q):
        return np.exp(-q * self._inv)

    def profile_d1(self, q):
        return -self._inv * np.exp(-q * self._inv)

    def profile_d2(self, q):
        return self._inv**2 * np.exp(-q * self._inv)

    def bound(self):
        return 1.0

    def grad_bound(self):
        return 1.0 / (self.bandwidth * math.sqrt(math.e))

    def __repr__(self):
        return f"RBFKernel(bandwidth={self.bandwidth!r})"


class IMQKernel(RadialKernel):
    """K(x, y) = (c + |x - y|^2 / (2 s^2))^(-1/2)"""

    def __init__(self, offset=1.0, scale=1.0):
        offset, scale = float(offset), float(scale)
        if not (offset > 0 and scale > 0):
            raise ConfigError(f"IMQ offset and scale must be positive, got c={offset}, s={scale}")
        self.offset = offset
        self.scale = scale
        self._coef = 1.0 / (2.0 * scale**2)

    @property
    def name(self):
        return f"imq({self.offset!r},{self.scale!r})"

    def profile(self, q):
        return (self.offset + self._coef * q) ** -0.5

    def profile_d1(self, q):
        return -0.5 * self._coef * (self.offset + self._coef * q) ** -1.5

    def profile_d2(self, q):
        return 0.75 * self._coef**2 * (self.offset + self._coef * q) ** -2.5

    def bound(self):
        return self.offset**-0.5

    def grad_bound(self):
        # maximum of |grad2| is reached at |x - y|^2 / (2 s^2) = c / 2
        c = self.offset
        return math.sqrt(c) / (2.0 * self.scale) * (1.5 * c) ** -1.5

    def __repr__(self):
        return f"IMQKernel(offset={self.offset!r}, scale={self.scale!r})"


class ZeroKernel(RadialKernel):
    """K = 0: removes the interaction and leaves the Langevin part alone"""

    name = "zero"

    def profile(self, q):
        return np.zeros_like(np.asarray(q, dtype=float))

    profile_d1 = profile
    profile_d2 = profile

    def bound(self):
        return 0.0

    def grad_bound(self):
        return 0.0

    def __repr__(self):
        return "ZeroKernel()"


class MedianRBFKernel(RBFKernel):
    """
    RBF kernel whose bandwidth follows the median heuristic of the snapshot
    it is applied to. Used as is, it behaves like RBF(h=1).
    """

    def __init__(self):
        super().__init__(1.0)

    @property
    def name(self):
        return "rbf(median)"

    def for_points(self, X):
        return RBFKernel(median_heuristic_bandwidth(X))

    def __repr__(self):
        return "MedianRBFKernel()"


def rbf_kernel(bandwidth=1.0):
    """Gaussian kernel; the default unit bandwidth matches the collapse experiment"""
    return RBFKernel(bandwidth)


def imq_kernel(offset=1.0, scale=1.0):
    """
    Inverse multiquadric kernel with exponent -1/2

    The defaults c = 1, s = 1 give 1 / sqrt(1 + |x - y|^2 / 2).
    """
    return IMQKernel(offset, scale)


def median_heuristic_bandwidth(points):
    """
    Median pairwise distance divided by sqrt(2 log(n + 1))

    Args:
        points: (n, d) array, n >= 2

    Returns:
        Positive bandwidth; degenerate clouds get BANDWIDTH_FLOOR and a warning

    Raises:
        ConfigError: If fewer than two points are given
    """
    points = np.atleast_2d(np.asarray(points, dtype=float))
    n = points.shape[0]
    if n < 2:
        raise ConfigError("median heuristic needs at least two points")
    median = float(np.median(pdist(points)))
    bandwidth = median / math.sqrt(2.0 * math.log(n + 1))
    if bandwidth < BANDWIDTH_FLOOR:
        logger.warning("degenerate point cloud: bandwidth floored at %g", BANDWIDTH_FLOOR)
        return BANDWIDTH_FLOOR
    return bandwidth


def kernel_from_spec(spec):
    """
    Build a kernel from its spec string

    Accepted forms: rbf, rbf(h), rbf(median), imq, imq(c,s), zero.
    """
    if isinstance(spec, KernelModel):
        return spec
    name, args = split_spec(spec)
    try:
        if name == "rbf":
            if args == ["median"]:
                return MedianRBFKernel()
            return RBFKernel(*[float(a) for a in args])
        if name == "imq":
            return IMQKernel(*[float(a) for a in args])
        if name == "zero" and not args:
            return ZeroKernel()
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad kernel spec {spec!r}: {exc}") from exc
    raise ConfigError(f"unknown kernel spec {spec!r}")
