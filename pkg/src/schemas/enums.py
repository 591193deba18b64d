"""
Enum definitions shared by configs, domain objects and artifacts.
"""
from enum import Enum


class RunMode(str, Enum):
    """How the surrogate program is solved."""

    OPEN_LOOP = "open-loop"
    RECEDING = "receding"


class SolveStatus(str, Enum):
    """Outcome of an optimizer run."""

    OPTIMAL = "Optimal"
    MAX_ITERS = "MaxIters"
    INFEASIBLE = "Infeasible"


class DiscretizationMethod(str, Enum):
    """Continuous-to-discrete conversion."""

    ZOH = "zoh"
    EULER = "euler"


class ModelKind(str, Enum):
    """Which system builder a scenario config selects."""

    OBSTACLE = "obstacle"
    VEHICLE = "vehicle"
    QUADROTOR = "quadrotor"
    CUSTOM = "custom"


class ReferenceKind(str, Enum):
    """Output reference generator for tracking objectives."""

    CONSTANT = "constant"
    STEP = "step"
    HELIX = "helix"


class EmitTarget(str, Enum):
    """Intermediate objects the CLI can export."""

    BASIS = "basis"
    QUADRATURE = "quadrature"
    GALERKIN = "galerkin"
