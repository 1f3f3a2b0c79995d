"""
Exception hierarchy shared by every module of the lab.

Each class carries the process exit code the command line maps it to:
2 for invalid input, 3 for numerical failure, 4 for results that contradict
the theory the lab checks (these must abort loudly).
"""
from typing import Any, Optional


class VortexLabError(Exception):
    """Base class for all lab errors."""
    exit_code = 3


class ConfigurationError(VortexLabError):
    """Invalid grid or mismatched grids."""
    exit_code = 2


class ScenarioError(ConfigurationError):
    """Scenario file failed validation."""


class DomainError(VortexLabError):
    """Parameter outside the domain of an operation."""
    exit_code = 2


class PreconditionError(VortexLabError):
    """An operation's stated precondition does not hold."""
    exit_code = 2


class InvalidMapError(VortexLabError):
    """Polynomial data does not define a valid holomorphic map."""
    exit_code = 2


class DegenerateFiberError(InvalidMapError):
    """Base point lies on a divisor or a fiber value vanishes."""


class DataError(VortexLabError):
    """Input samples unusable for a fit."""
    exit_code = 2


class SolvabilityError(VortexLabError):
    """Poisson right-hand side has nonzero mean."""

    def __init__(self, mean: float):
        super().__init__(f"Poisson right-hand side has mean {mean:.3e}")
        self.mean = mean


class SolverFailure(VortexLabError):
    """Iteration did not reach its tolerance.

    The last iterate is kept on the exception so callers can inspect it.
    """

    def __init__(self, msg: str, result: Any = None, iterations: Optional[int] = None):
        super().__init__(msg)
        self.result = result
        self.iterations = iterations


class NonConvergenceError(VortexLabError):
    """A family does not converge (coefficients oscillate, C1 check fails)."""


class StratificationError(VortexLabError):
    """Family is not in the divisor-coalescence boundary stratum."""


class LimitUndefinedError(VortexLabError):
    """Adiabatic limit requested where h touches zero."""


class ResolutionError(VortexLabError):
    """Energy atoms closer than the finest detection radius allows."""


class DegenerateRescalingError(VortexLabError):
    """Rescaled domains fail to grow along the schedule."""


class DegreeError(VortexLabError):
    """Background curvature does not integrate to the degree."""


class AccuracyError(VortexLabError):
    """Sampling too coarse for the requested quadrature."""


class TheoryViolationError(VortexLabError):
    """A bound guaranteed by the theory was exceeded."""
    exit_code = 4
