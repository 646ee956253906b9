"""
Errors

Exception hierarchy shared by every module. Everything raised on purpose by
the package derives from NoisySVGDError so the CLI can map it to an exit code.
"""


class NoisySVGDError(Exception):
    """Base class for all package errors"""


class ConfigError(NoisySVGDError, ValueError):
    """Invalid configuration, spec string or constructor parameter"""


class StepBlowUpError(NoisySVGDError, ArithmeticError):
    """A particle left the finite reals during an update"""

    def __init__(self, particle, iteration, message=None):
        self.particle = particle
        self.iteration = iteration
        super().__init__(
            message
            or f"non-finite coordinate for particle {particle} at iteration {iteration}; "
            "the step size is probably too large"
        )


class RetentionError(NoisySVGDError):
    """The trajectory does not hold the snapshots an operation needs"""


class MetricError(NoisySVGDError, ValueError):
    """A diagnostic cannot be computed on the given input"""


class SupportCapError(MetricError):
    """Exact transport instance larger than the configured support cap"""


class OracleError(NoisySVGDError):
    """Reference-flow simulation or check failed"""


class PlotError(NoisySVGDError, ValueError):
    """Malformed CSV input or unknown column in a plot spec"""
