"""
Contract probes

Pointwise, finite-difference checks standing in for the smoothness and
boundedness assumptions on targets and kernels. They run on random probe
points drawn from a seeded generator, so a report is reproducible.
"""
import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

FD_STEP = 1e-5
GRADIENT_RTOL = 1e-4
MIXED_RTOL = 1e-3
ATOL = 1e-8
DEFAULT_BOUND = 10.0


@dataclass
class ContractReport:
    """Named checks, each with a pass flag and the worst value seen"""

    subject: str
    checks: dict = field(default_factory=dict)

    def add(self, name, passed, value):
        self.checks[name] = {"passed": bool(passed), "value": float(value)}

    @property
    def passed(self):
        return all(check["passed"] for check in self.checks.values())

    def failures(self):
        return [name for name, check in self.checks.items() if not check["passed"]]

    def to_dict(self):
        return {"subject": self.subject, "passed": self.passed, "checks": self.checks}


def finite_difference_gradient(fn, x, step=FD_STEP):
    """Central differences of a scalar function; for tests and probes only"""
    x = np.asarray(x, dtype=float)
    grad = np.empty_like(x)
    for a in range(x.size):
        e = np.zeros_like(x)
        e[a] = step
        grad[a] = (fn(x + e) - fn(x - e)) / (2.0 * step)
    return grad


def _mismatch(numeric, analytic, rtol):
    """Worst |numeric - analytic| / (rtol |analytic| + ATOL); <= 1 passes"""
    numeric = np.atleast_1d(numeric)
    analytic = np.atleast_1d(analytic)
    return float(np.max(np.abs(numeric - analytic) / (rtol * np.abs(analytic) + ATOL)))


def check_target(target, rng, probes=16, scale=2.0):
    """
    Probe a target's gradient and dissipativity

    Args:
        target: TargetModel
        rng: numpy Generator for the probe points
        probes: Number of random points
        scale: Standard deviation of the probe cloud

    Returns:
        ContractReport with checks "gradient" and "dissipativity"
    """
    report = ContractReport(target.name)
    points = scale * rng.standard_normal((probes, target.dimension))
    worst = 0.0
    for x in points:
        numeric = finite_difference_gradient(target.potential, x)
        worst = max(worst, _mismatch(numeric, target.gradient(x), GRADIENT_RTOL))
    report.add("gradient", worst <= 1.0, worst)

    if target.dissipativity is not None:
        c, C, radius = target.dissipativity
        sq = np.einsum("ij,ij->i", points, points)
        slack = float(np.min(target.potential(points) - (c * sq - C)))
        report.add("dissipativity", slack >= -1e-9, slack)
        if radius > 0:
            logger.debug("%s: dissipativity bound informative beyond radius %g", target.name, radius)
    return report


def check_kernel(kernel, d, rng, probes=16, scale=1.0, bound=DEFAULT_BOUND):
    """
    Probe a kernel's symmetry, derivatives, boundedness and Hoelder continuity

    Args:
        kernel: KernelModel
        d: Dimension of the probe points
        rng: numpy Generator for the probe points
        probes: Number of random (x, y) pairs
        scale: Standard deviation of the probe cloud
        bound: Constant that sup |K| and sup |grad2 K| must stay below

    Returns:
        ContractReport with checks symmetry, grad2, mixed_trace, bounded, hoelder
    """
    report = ContractReport(getattr(kernel, "name", repr(kernel)))
    xs = scale * rng.standard_normal((probes, d))
    ys = scale * rng.standard_normal((probes, d))

    asym = grad_err = mixed_err = sup = 0.0
    for x, y in zip(xs, ys):
        asym = max(asym, abs(kernel.eval(x, y) - kernel.eval(y, x)))
        numeric = finite_difference_gradient(lambda v: kernel.eval(x, v), y)
        grad_err = max(grad_err, _mismatch(numeric, kernel.grad2(x, y), GRADIENT_RTOL))
        trace = 0.0
        for a in range(d):
            e = np.zeros(d)
            e[a] = FD_STEP
            trace += (kernel.grad2(x + e, y)[a] - kernel.grad2(x - e, y)[a]) / (2.0 * FD_STEP)
        mixed_err = max(mixed_err, _mismatch(trace, kernel.mixed_trace(x, y), MIXED_RTOL))
        sup = max(sup, abs(kernel.eval(x, y)), float(np.linalg.norm(kernel.grad2(x, y))))
    report.add("symmetry", asym <= 1e-14, asym)
    report.add("grad2", grad_err <= 1.0, grad_err)
    report.add("mixed_trace", mixed_err <= 1.0, mixed_err)
    report.add("bounded", sup < bound, sup)

    lipschitz = getattr(kernel, "grad_bound", lambda: np.inf)()
    if np.isfinite(lipschitz):
        # shift x only, compare against the gradient bound
        shifted = xs + 0.1 * rng.standard_normal(xs.shape)
        ratio = 0.0
        for x, x2, y in zip(xs, shifted, ys):
            gap = abs(kernel.eval(x, y) - kernel.eval(x2, y))
            ratio = max(ratio, gap / max(float(np.linalg.norm(x - x2)), 1e-300))
        report.add("hoelder", ratio <= lipschitz * (1 + 1e-9) + 1e-15, ratio)
    return report
