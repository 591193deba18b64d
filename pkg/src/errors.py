"""
Domain exception hierarchy.
Every error carries a stable code that the CLI surfaces in its error response,
and the exit status the CLI returns for it.
"""
from typing import Optional

EXIT_CONFIG = 1
EXIT_NUMERICAL = 2
EXIT_INFEASIBLE = 3


class SmpcError(Exception):
    """Base class for all domain errors."""

    code = "SMPC_ERROR"
    exit_code = EXIT_NUMERICAL

    def __init__(self, message: str, field: Optional[str] = None):
        super().__init__(message)
        self.message = message
        self.field = field


# Input validation

class DimensionMismatch(SmpcError, ValueError):
    code = "DIMENSION_MISMATCH"
    exit_code = EXIT_CONFIG


class WeightSumInvalid(SmpcError, ValueError):
    code = "WEIGHT_SUM_INVALID"
    exit_code = EXIT_CONFIG


class NonPSDCovariance(SmpcError, ValueError):
    code = "NON_PSD_COVARIANCE"
    exit_code = EXIT_CONFIG


class DegreeOverflow(SmpcError, ValueError):
    code = "DEGREE_OVERFLOW"
    exit_code = EXIT_CONFIG


class ConfigError(SmpcError, ValueError):
    code = "CONFIG_ERROR"
    exit_code = EXIT_CONFIG


class MissingModelConfig(ConfigError):
    code = "MISSING_MODEL_CONFIG"


# Numerical failures

class CholeskyFailure(SmpcError):
    code = "CHOLESKY_FAILURE"


class DegenerateMeasure(SmpcError):
    code = "DEGENERATE_MEASURE"


class ToleranceNotMet(SmpcError):
    code = "TOLERANCE_NOT_MET"


class NonConvergentSeries(SmpcError):
    code = "NON_CONVERGENT_SERIES"


# Quadrature generation

class QuadratureError(SmpcError):
    code = "QUADRATURE_ERROR"


class Stalled(QuadratureError):
    code = "STALLED"

    def __init__(self, message: str, residual: float):
        super().__init__(message)
        self.residual = residual


class TooFewNodes(QuadratureError, ValueError):
    code = "TOO_FEW_NODES"


class NoExactRuleFound(QuadratureError):
    code = "NO_EXACT_RULE_FOUND"


# Optimization

class InfeasibleProblem(SmpcError):
    """
    Raised when the solver cannot bring the scaled chance margins below the
    feasibility tolerance. The best iterate is attached as `solution`, and
    receding-horizon runs attach the failing `step`.
    """

    code = "INFEASIBLE"
    exit_code = EXIT_INFEASIBLE

    def __init__(self, message: str, solution=None, step: Optional[int] = None):
        super().__init__(message)
        self.solution = solution
        self.step = step
