"""
Scenario service layer.
Loads TOML experiment configs, builds the benchmark systems and handles
continuous-to-discrete conversion.
"""
import logging

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import ValidationError
from scipy.linalg import expm

from src.errors import ConfigError, MissingModelConfig, NonConvergentSeries, SmpcError
from src.models.mixture import GaussianMixture
from src.models.problem import AffineConstraint
from src.models.scenario import Discretization, ProblemSpec, Reference, Scenario
from src.models.system import ParametricMatrix, PolyMatrix, StochasticLTI
from src.schemas.enums import DiscretizationMethod, ModelKind
from src.schemas.scenario import (
    BoxConfig,
    ModelConfig,
    ProblemConfig,
    ScenarioConfig,
    SystemConfig,
    TermGrid,
)
from src.services.uncertainty_service import mixture_new

logger = logging.getLogger(__name__)

PACKAGED_SCENARIOS = ("obstacle", "vehicle", "quadrotor")

QUADROTOR_LABELS = (
    "x", "x_dot", "y", "y_dot", "z", "z_dot",
    "phi", "phi_dot", "theta", "theta_dot", "psi", "psi_dot",
)


# Discretization

def zoh_batch(A: np.ndarray, B: np.ndarray, dt: float) -> Tuple[np.ndarray, np.ndarray]:
    """
    Zero-order hold of a batch of systems via the augmented matrix exponential.

    Args:
        A: (n, n_x, n_x) continuous state matrices
        B: (n, n_x, n_u) continuous input matrices
        dt: Step length in seconds

    Returns:
        (A_d, B_d) with the same leading batch dimension

    Raises:
        NonConvergentSeries: If the exponential is not finite
    """
    if dt <= 0:
        raise ValueError(f"Step length must be positive, got {dt}")
    n, n_x, n_u = B.shape
    augmented = np.zeros((n, n_x + n_u, n_x + n_u))
    augmented[:, :n_x, :n_x] = A * dt
    augmented[:, :n_x, n_x:] = B * dt
    exponential = expm(augmented)
    if not np.all(np.isfinite(exponential)):
        raise NonConvergentSeries(f"Matrix exponential overflowed at dt={dt}")
    return exponential[:, :n_x, :n_x], exponential[:, :n_x, n_x:]


def discretize(
    A: np.ndarray,
    B: np.ndarray,
    dt: float,
    method: DiscretizationMethod = DiscretizationMethod.ZOH,
) -> Tuple[np.ndarray, np.ndarray]:
    """
    Discretize a xi-independent continuous pair.

    Raises:
        NonConvergentSeries: If the ZOH exponential is not finite
    """
    A = np.atleast_2d(np.asarray(A, dtype=float))
    B = np.asarray(B, dtype=float).reshape(A.shape[0], -1)
    if dt <= 0:
        raise ValueError(f"Step length must be positive, got {dt}")
    if method is DiscretizationMethod.EULER:
        return np.eye(A.shape[0]) + dt * A, dt * B
    A_d, B_d = zoh_batch(A[None], B[None], dt)
    return A_d[0], B_d[0]


@dataclass(frozen=True, eq=False)
class ZohPair:
    """
    Per-point ZOH of a parameter-dependent continuous pair.

    A_d and B_d come out of one exponential; the last batch is cached so the
    two matrices evaluated at the same points share it.
    """

    A: ParametricMatrix
    B: ParametricMatrix
    dt: float
    _cache: Dict[str, Any] = field(default_factory=dict, repr=False)

    def evaluate_batch(self, points: np.ndarray) -> Tuple[np.ndarray, np.ndarray]:
        points = np.atleast_2d(np.asarray(points, dtype=float))
        key = (points.shape, points.tobytes())
        if self._cache.get("key") != key:
            pair = zoh_batch(self.A.evaluate_batch(points), self.B.evaluate_batch(points), self.dt)
            self._cache.clear()
            self._cache.update(key=key, pair=pair)
        return self._cache["pair"]


@dataclass(frozen=True, eq=False)
class ZohMatrix:
    """One half (state or input matrix) of a ZohPair; not polynomial in xi."""

    pair: ZohPair
    part: int                     # 0 -> A_d, 1 -> B_d

    @property
    def shape(self) -> Tuple[int, int]:
        n_x = self.pair.A.shape[0]
        return (n_x, n_x) if self.part == 0 else (n_x, self.pair.B.shape[1])

    @property
    def d(self) -> int:
        return self.pair.A.d

    @property
    def degree(self) -> Optional[int]:
        return None

    def evaluate_batch(self, points: np.ndarray) -> np.ndarray:
        return self.pair.evaluate_batch(points)[self.part]


def discretize_system(
    sys: StochasticLTI,
    dt: float,
    method: DiscretizationMethod = DiscretizationMethod.ZOH,
) -> StochasticLTI:
    """
    Discretize a continuous parameter-dependent system; D and omega are kept as given.

    Euler acts entrywise and keeps the entries polynomial. ZOH of a
    xi-independent pair is exact and constant; otherwise the exponential is
    taken at every evaluation point (per quadrature node or MC sample).
    """
    if dt <= 0:
        raise ValueError(f"Step length must be positive, got {dt}")
    if method is DiscretizationMethod.EULER:
        if not isinstance(sys.A, PolyMatrix) or not isinstance(sys.B, PolyMatrix):
            raise TypeError("Euler discretization needs polynomial matrices")
        A_d = sys.A.scaled(dt).plus_constant(np.eye(sys.n_x))
        return StochasticLTI(A=A_d, B=sys.B.scaled(dt), D=sys.D, omega=sys.omega)

    constant = all(isinstance(m, PolyMatrix) and m.is_constant for m in (sys.A, sys.B))
    if constant:
        zero = np.zeros((1, sys.d))
        A_d, B_d = discretize(sys.A.evaluate(zero[0]), sys.B.evaluate(zero[0]), dt, method)
        return StochasticLTI(
            A=PolyMatrix.constant(A_d, sys.d),
            B=PolyMatrix.constant(B_d, sys.d),
            D=sys.D,
            omega=sys.omega,
        )
    pair = ZohPair(A=sys.A, B=sys.B, dt=dt)
    return StochasticLTI(A=ZohMatrix(pair, 0), B=ZohMatrix(pair, 1), D=sys.D, omega=sys.omega)


# System builders

def obstacle_system(rho: Sequence[float] = (0.001, 0.05)) -> StochasticLTI:
    """
    x_{t+1} = [[0.9 + r1 xi1, 0.1], [0.1, 0.85]] x_t + [[0.25 - r1 xi1], [0.75 + r2 xi2]] u_t.
    """
    r1, r2 = float(rho[0]), float(rho[1])
    A = PolyMatrix.from_terms(
        {(0, 0): [[0.9, 0.1], [0.1, 0.85]], (1, 0): [[r1, 0.0], [0.0, 0.0]]},
        shape=(2, 2),
        d=2,
    )
    B = PolyMatrix.from_terms(
        {(0, 0): [[0.25], [0.75]], (1, 0): [[-r1], [0.0]], (0, 1): [[0.0], [r2]]},
        shape=(2, 1),
        d=2,
    )
    return StochasticLTI(A=A, B=B)


def vehicle_system(model: ModelConfig) -> StochasticLTI:
    """
    Continuous lateral-error dynamics with uncertain cornering stiffness.

    States (e1, e1_dot, e2, e2_dot), input front steering angle. The
    stiffnesses are C_f = C(1 + s xi_1) and C_r = C(1 + s xi_2), with the
    nominal C converted from N/deg to N/rad, so the matrices are affine in xi.
    """
    vx, m, a, b, iz = model.speed, model.mass, model.front_distance, model.rear_distance, model.yaw_inertia
    nominal = model.stiffness_per_deg * 180.0 / np.pi
    spread = model.stiffness_spread

    structural = np.array([[0.0, 1.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 1.0], [0.0, 0.0, 0.0, 0.0]])
    per_front = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, -2.0 / (m * vx), 2.0 / m, -2.0 * a / (m * vx)],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, -2.0 * a / (iz * vx), 2.0 * a / iz, -2.0 * a ** 2 / (iz * vx)],
    ])
    per_rear = np.array([
        [0.0, 0.0, 0.0, 0.0],
        [0.0, -2.0 / (m * vx), 2.0 / m, 2.0 * b / (m * vx)],
        [0.0, 0.0, 0.0, 0.0],
        [0.0, 2.0 * b / (iz * vx), -2.0 * b / iz, -2.0 * b ** 2 / (iz * vx)],
    ])
    input_front = np.array([[0.0], [2.0 / m], [0.0], [2.0 * a / iz]])

    A = PolyMatrix.from_terms(
        {
            (0, 0): structural + nominal * (per_front + per_rear),
            (1, 0): spread * nominal * per_front,
            (0, 1): spread * nominal * per_rear,
        },
        shape=(4, 4),
        d=2,
    )
    B = PolyMatrix.from_terms(
        {(0, 0): nominal * input_front, (1, 0): spread * nominal * input_front},
        shape=(4, 1),
        d=2,
    )
    return StochasticLTI(A=A, B=B)


def quadrotor_system(model: ModelConfig, d: int) -> StochasticLTI:
    """
    Continuous hover linearization with an additive per-step disturbance D omega(xi), omega(xi) = xi.

    Raises:
        MissingModelConfig: If the A or B matrix is not configured
    """
    if model.a is None or model.b is None:
        raise MissingModelConfig("Quadrotor scenario needs model.a and model.b matrices", field="model")
    A = np.asarray(model.a, dtype=float)
    B = np.asarray(model.b, dtype=float)
    D, omega = None, None
    if model.d is not None:
        D_matrix = np.asarray(model.d, dtype=float)
        if D_matrix.shape[1] != d:
            raise ConfigError(f"model.d has {D_matrix.shape[1]} columns, mixture dimension is {d}", field="model.d")
        D = PolyMatrix.constant(D_matrix, d)
        omega = PolyMatrix.from_entries(
            [[[(tuple(int(i == j) for j in range(d)), 1.0)]] for i in range(d)], d=d
        )
    return StochasticLTI(A=PolyMatrix.constant(A, d), B=PolyMatrix.constant(B, d), D=D, omega=omega)


def _grid_to_poly(grid: TermGrid, d: int) -> PolyMatrix:
    entries = [[[(tuple(term.exponents), term.coeff) for term in entry] for entry in row] for row in grid]
    return PolyMatrix.from_entries(entries, d=d)


def custom_system(system: SystemConfig, d: int) -> StochasticLTI:
    """Polynomial system whose entries are lists of {exponents, coeff} terms."""
    return StochasticLTI(
        A=_grid_to_poly(system.a, d),
        B=_grid_to_poly(system.b, d),
        D=_grid_to_poly(system.d, d) if system.d is not None else None,
        omega=_grid_to_poly(system.omega, d) if system.omega is not None else None,
    )


# Problem data

def _weight_matrix(values: List[Any], name: str) -> np.ndarray:
    matrix = np.asarray(values, dtype=float)
    if matrix.ndim == 1:
        return np.diag(matrix)
    if matrix.ndim == 2 and matrix.shape[0] == matrix.shape[1]:
        return matrix
    raise ConfigError(f"{name} must be a diagonal list or a square matrix", field=f"problem.{name}")


def _initial_state(values: List[Any], d: int) -> PolyMatrix:
    if all(isinstance(v, (int, float)) for v in values):
        return PolyMatrix.constant(np.asarray(values, dtype=float).reshape(-1, 1), d)
    entries = []
    for row in values:
        if isinstance(row, (int, float)):
            entries.append([[((0,) * d, float(row))]])
        else:
            entries.append([[(tuple(term["exponents"]), float(term["coeff"])) for term in row]])
    return PolyMatrix.from_entries(entries, d=d)


def _box_constraints(box: BoxConfig, n_x: int, beta: float) -> Tuple[AffineConstraint, ...]:
    lower, upper = box.lower, box.upper
    if box.unit == "deg":
        lower, upper = np.deg2rad(lower), np.deg2rad(upper)
    normal = np.zeros(n_x)
    normal[box.state] = 1.0
    label = box.name or f"x{box.state + 1}"
    return (
        AffineConstraint(a=normal, b=-float(upper), beta=beta, name=f"{label}_upper"),
        AffineConstraint(a=-normal, b=float(lower), beta=beta, name=f"{label}_lower"),
    )


def build_problem_spec(problem: ProblemConfig, n_x: int, n_u: int, d: int, horizon: int, beta: float) -> ProblemSpec:
    """Translate the [problem] section into xi-level problem data."""
    constraints: List[AffineConstraint] = []
    for con in problem.constraints:
        if len(con.a) != n_x:
            raise ConfigError(f"Constraint '{con.name}' needs {n_x} coefficients", field="problem.constraints")
        constraints.append(AffineConstraint(
            a=np.asarray(con.a, dtype=float),
            b=con.b,
            beta=con.beta if con.beta is not None else beta,
            active_times=tuple(con.active_times) if con.active_times is not None else None,
            name=con.name,
        ))
    for box in problem.boxes:
        if box.state >= n_x:
            raise ConfigError(f"Box refers to state {box.state} of {n_x}", field="problem.boxes")
        constraints.extend(_box_constraints(box, n_x, beta))

    u_lower = np.full(n_u, -np.inf) if problem.u_lower is None else np.asarray(problem.u_lower, dtype=float)
    u_upper = np.full(n_u, np.inf) if problem.u_upper is None else np.asarray(problem.u_upper, dtype=float)

    C = S = reference = None
    if problem.tracking is not None:
        C = np.asarray(problem.tracking.c, dtype=float)
        S = np.asarray(problem.tracking.s, dtype=float)
        ref = problem.tracking.reference
        value = np.asarray(ref.value, dtype=float) if ref.value else np.zeros(C.shape[0])
        reference = Reference(kind=ref.kind, value=value, radius=ref.radius, rate=ref.rate, climb=ref.climb)

    return ProblemSpec(
        horizon=horizon,
        Q=_weight_matrix(problem.q, "q"),
        R=_weight_matrix(problem.r, "r"),
        x_init=_initial_state(problem.x_init, d),
        u_lower=u_lower,
        u_upper=u_upper,
        constraints=tuple(constraints),
        C=C,
        S=S,
        reference=reference,
    )


def build_mixture(cfg: ScenarioConfig) -> GaussianMixture:
    return mixture_new((c.weight, c.mean, c.cov) for c in cfg.mixture.components)


def build_scenario(cfg: ScenarioConfig) -> Scenario:
    """
    Build a Scenario from a validated config.

    Raises:
        ConfigError: If the sections are mutually inconsistent
        MissingModelConfig: If a quadrotor config lacks its matrices
    """
    mixture = build_mixture(cfg)
    d = mixture.dimension
    model = cfg.model
    discretization = None
    labels: Tuple[str, ...] = ()

    if model.kind is ModelKind.OBSTACLE:
        system = obstacle_system((0.0, 0.0) if model.deterministic else model.rho)
        labels = ("x1", "x2")
    elif model.kind is ModelKind.VEHICLE:
        discretization = Discretization(model.discretization, model.dt)
        system = discretize_system(vehicle_system(model), model.dt, model.discretization)
        labels = ("e1", "e1_dot", "e2", "e2_dot")
    elif model.kind is ModelKind.QUADROTOR:
        discretization = Discretization(model.discretization, model.dt)
        system = discretize_system(quadrotor_system(model, d), model.dt, model.discretization)
        labels = QUADROTOR_LABELS
    else:
        system = custom_system(cfg.system, d)

    if system.d != d:
        raise ConfigError(f"System depends on {system.d} parameters, mixture has {d}", field="mixture")
    if not labels:
        labels = tuple(f"x{i + 1}" for i in range(system.n_x))

    try:
        problem = build_problem_spec(cfg.problem, system.n_x, system.n_u, d, cfg.run.horizon, cfg.run.beta)
        scenario = Scenario(
            name=cfg.run.scenario,
            system=system,
            mixture=mixture,
            problem=problem,
            dt=model.dt,
            discretization=discretization,
            steps=cfg.run.steps,
            report_step=cfg.run.report_step,
            u_eq=np.asarray(model.u_eq, dtype=float) if model.u_eq is not None else None,
            state_labels=labels,
        )
    except SmpcError:
        raise
    except ValueError as exc:
        raise ConfigError(str(exc), field="problem") from exc

    logger.info(
        f"Built scenario '{scenario.name}': n_x={system.n_x} n_u={system.n_u} d={d} "
        f"constraints={len(problem.constraints)}"
    )
    return scenario


# Config files

def _parse_value(text: str) -> Any:
    try:
        return tomllib.loads(f"value = {text}")["value"]
    except tomllib.TOMLDecodeError:
        return text


def apply_overrides(raw: Dict[str, Any], overrides: Sequence[str]) -> Dict[str, Any]:
    """
    Apply `dotted.key=value` overrides; values are parsed as TOML literals,
    falling back to plain strings.
    """
    for item in overrides:
        key, sep, text = item.partition("=")
        if not sep or not key.strip():
            raise ConfigError(f"Override '{item}' is not of the form key=value", field=item)
        parts = key.strip().split(".")
        target = raw
        for part in parts[:-1]:
            node = target.setdefault(part, {})
            if not isinstance(node, dict):
                raise ConfigError(f"Override '{key}' descends into a non-table value", field=key)
            target = node
        target[parts[-1]] = _parse_value(text.strip())
    return raw


def packaged_config_path(name: str) -> Path:
    """Path of a shipped scenario config."""
    return Path(str(resources.files("src.scenarios").joinpath(f"{name}.toml")))


def resolve_config_path(source: Union[str, Path]) -> Path:
    path = Path(source)
    if path.is_file():
        return path
    if str(source) in PACKAGED_SCENARIOS:
        return packaged_config_path(str(source))
    raise ConfigError(f"No config file or packaged scenario named '{source}'", field="scenario")


def load_config(source: Union[str, Path], overrides: Sequence[str] = ()) -> ScenarioConfig:
    """
    Read, override and validate a scenario config.

    Args:
        source: File path or packaged scenario name
        overrides: `key=value` strings applied before validation

    Raises:
        ConfigError: On unreadable TOML or schema violations; the message names
            the line or the offending field
    """
    path = resolve_config_path(source)
    try:
        with open(path, "rb") as fh:
            raw = tomllib.load(fh)
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"{path}: {exc}", field=str(path)) from exc

    raw = apply_overrides(raw, overrides)
    try:
        return ScenarioConfig.model_validate(raw)
    except ValidationError as exc:
        first = exc.errors()[0]
        location = ".".join(str(part) for part in first["loc"])
        raise ConfigError(f"{path}: {location}: {first['msg']}", field=location) from exc


def scenario_obstacle(deterministic: bool = False) -> Scenario:
    """Obstacle-avoidance benchmark; `deterministic` sets rho1 = rho2 = 0."""
    overrides = ["model.deterministic=true"] if deterministic else []
    return build_scenario(load_config("obstacle", overrides))


def scenario_vehicle() -> Scenario:
    """Vehicle path-following benchmark (ZOH per evaluation point at dt = 0.05 s)."""
    return build_scenario(load_config("vehicle"))


def scenario_quadrotor(reference: Optional[str] = None) -> Scenario:
    """Quadrotor hover benchmark; reference is "helix" (default config) or "step"."""
    overrides = []
    if reference == "step":
        overrides = ['problem.tracking.reference.kind="step"', "problem.tracking.reference.value=[10.0, 10.0, 0.0]"]
    elif reference is not None:
        overrides = [f'problem.tracking.reference.kind="{reference}"']
    return build_scenario(load_config("quadrotor", overrides))
