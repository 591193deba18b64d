"""
Scenario configuration schemas for TOML experiment files.
"""
from pathlib import Path
from typing import Any, List, Literal, Optional

from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from src.schemas.enums import DiscretizationMethod, ModelKind, ReferenceKind, RunMode


class RunConfig(BaseModel):
    """
    Pipeline settings of one experiment.
    beta is the default confidence level of every chance constraint.
    """
    model_config = ConfigDict(extra="forbid")

    scenario: str = "custom"
    p: int = Field(2, ge=1, le=8)
    beta: float = 0.99
    horizon: int = Field(4, ge=1)
    mode: RunMode = RunMode.OPEN_LOOP
    steps: int = Field(1, ge=1)
    quadrature_seed: int = 0
    mc_seed: int = 1
    mc_samples: int = Field(100_000, ge=2)
    report_step: int = Field(0, ge=0)
    output_dir: Optional[Path] = None

    @field_validator("beta")
    @classmethod
    def beta_in_open_interval(cls, v: float) -> float:
        if not 0.5 < v < 1.0:
            raise ValueError("beta must lie strictly between 0.5 and 1")
        return v

    @model_validator(mode="after")
    def report_step_within_horizon(self) -> "RunConfig":
        if self.report_step > self.horizon:
            raise ValueError(f"report_step {self.report_step} exceeds horizon {self.horizon}")
        return self


class ComponentConfig(BaseModel):
    """One Gaussian component: weight, mean vector and covariance matrix."""
    model_config = ConfigDict(extra="forbid")

    weight: float = Field(ge=0.0, le=1.0)
    mean: List[float] = Field(min_length=1)
    cov: List[List[float]]


class MixtureConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    components: List[ComponentConfig] = Field(min_length=1)


class TermConfig(BaseModel):
    """coeff * xi^exponents"""
    model_config = ConfigDict(extra="forbid")

    exponents: List[int]
    coeff: float


# Row-major grid of entries, each entry a list of polynomial terms
TermGrid = List[List[List[TermConfig]]]


class SystemConfig(BaseModel):
    """Polynomial system for model.kind = "custom"."""
    model_config = ConfigDict(extra="forbid")

    a: TermGrid
    b: TermGrid
    d: Optional[TermGrid] = None
    omega: Optional[TermGrid] = None


class ModelConfig(BaseModel):
    """
    Dynamics of the scenario.

    Only the fields of the selected kind are used; continuous-time kinds
    (vehicle, quadrotor) are discretized with `discretization` and `dt`.
    """
    model_config = ConfigDict(extra="forbid")

    kind: ModelKind
    dt: float = Field(1.0, gt=0.0)
    discretization: DiscretizationMethod = DiscretizationMethod.ZOH

    # obstacle
    rho: List[float] = Field(default_factory=lambda: [0.001, 0.05], min_length=2, max_length=2)
    deterministic: bool = False

    # vehicle
    speed: float = Field(20.0, gt=0.0)
    mass: float = Field(1270.0, gt=0.0)
    front_distance: float = Field(1.015, gt=0.0)
    rear_distance: float = Field(1.895, gt=0.0)
    yaw_inertia: float = Field(1536.7, gt=0.0)
    stiffness_per_deg: float = Field(967.0, gt=0.0)
    stiffness_spread: float = Field(0.08, ge=0.0)

    # quadrotor (continuous-time hover linearization)
    a: Optional[List[List[float]]] = None
    b: Optional[List[List[float]]] = None
    d: Optional[List[List[float]]] = None
    u_eq: Optional[List[float]] = None


class BoxConfig(BaseModel):
    """lower <= x[state] <= upper, expanded into two affine chance constraints."""
    model_config = ConfigDict(extra="forbid")

    state: int = Field(ge=0)
    lower: float
    upper: float
    unit: Literal["rad", "deg"] = "rad"
    name: str = ""

    @model_validator(mode="after")
    def ordered(self) -> "BoxConfig":
        if self.lower > self.upper:
            raise ValueError("Box lower bound exceeds upper bound")
        return self


class ConstraintConfig(BaseModel):
    """Pr[a^T x + b <= 0] >= beta."""
    model_config = ConfigDict(extra="forbid")

    a: List[float]
    b: float
    beta: Optional[float] = None
    active_times: Optional[List[int]] = None
    name: str = ""

    @field_validator("beta")
    @classmethod
    def beta_in_open_interval(cls, v: Optional[float]) -> Optional[float]:
        if v is not None and not 0.5 < v < 1.0:
            raise ValueError("beta must lie strictly between 0.5 and 1")
        return v


class ReferenceConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: ReferenceKind = ReferenceKind.CONSTANT
    value: List[float] = Field(default_factory=list)
    radius: float = 2.0
    rate: float = 0.2
    climb: float = 0.2


class TrackingConfig(BaseModel):
    """Output tracking term (C x - y_ref)^T S (C x - y_ref)."""
    model_config = ConfigDict(extra="forbid")

    c: List[List[float]]
    s: List[List[float]]
    reference: ReferenceConfig = Field(default_factory=ReferenceConfig)


class ProblemConfig(BaseModel):
    """
    Control problem. q and r accept either a diagonal (list) or a full matrix.
    x_init accepts either a vector or, for uncertain initial states, a grid of term lists.
    """
    model_config = ConfigDict(extra="forbid")

    x_init: List[Any]
    q: List[Any]
    r: List[Any]
    u_lower: Optional[List[float]] = None
    u_upper: Optional[List[float]] = None
    constraints: List[ConstraintConfig] = Field(default_factory=list)
    boxes: List[BoxConfig] = Field(default_factory=list)
    tracking: Optional[TrackingConfig] = None


class ScenarioConfig(BaseModel):
    """Top-level layout of a scenario TOML file."""
    model_config = ConfigDict(extra="forbid")

    run: RunConfig = Field(default_factory=RunConfig)
    mixture: MixtureConfig
    model: ModelConfig
    problem: ProblemConfig
    system: Optional[SystemConfig] = None

    @model_validator(mode="after")
    def custom_needs_system(self) -> "ScenarioConfig":
        if self.model.kind is ModelKind.CUSTOM and self.system is None:
            raise ValueError("model.kind = 'custom' requires a [system] section")
        return self
