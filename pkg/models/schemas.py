import math
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    computed_field,
    field_validator,
    model_validator,
)

from config import settings

SIMPLEX_RENORMALIZE_TOL = 1e-9
MIXTURE_WEIGHT_TOL = 1e-12
MAX_SEED = 2**64 - 1


def nearest_neighbour_steps(dimension: int) -> Tuple[Tuple[int, ...], ...]:
    """Unit steps ordered (e_1, ..., e_d, -e_1, ..., -e_d), so index i+d is -e_i."""
    eye = np.eye(dimension, dtype=int)
    return tuple(tuple(int(c) for c in row) for row in np.vstack([eye, -eye]))


class StepSupport(BaseModel):
    """Ordered set of admissible lattice displacements."""

    model_config = ConfigDict(frozen=True)

    steps: Tuple[Tuple[int, ...], ...] = Field(..., description="Lattice displacement vectors")

    @field_validator("steps")
    @classmethod
    def _check_steps(cls, steps):
        if not steps:
            raise ValueError("support must contain at least one step")
        dims = {len(z) for z in steps}
        if len(dims) != 1:
            raise ValueError("all steps must have the same dimension")
        if len(set(steps)) != len(steps):
            raise ValueError("steps must be distinct")
        if max(max(abs(c) for c in z) for z in steps) < 1:
            raise ValueError("support radius must be at least 1")
        # also excludes supports of the form {0, z}
        if np.linalg.matrix_rank(np.array(steps, dtype=float)) < 2:
            raise ValueError("support must not be contained in a line through the origin")
        return steps

    @computed_field
    @property
    def radius_r0(self) -> int:
        return int(max(max(abs(c) for c in z) for z in self.steps))

    @property
    def dimension(self) -> int:
        return len(self.steps[0])

    @classmethod
    def nearest_neighbour(cls, dimension: int) -> "StepSupport":
        return cls(steps=nearest_neighbour_steps(dimension))


class DirichletParams(BaseModel):
    """Weights of a Dirichlet law on the nearest-neighbour simplex."""

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={"example": {"dimension_d": 2, "alphas": [2.0, 0.5, 0.5, 0.5]}},
    )

    dimension_d: int = Field(..., ge=2, description="Lattice dimension d")
    alphas: Tuple[float, ...] = Field(..., description="2d positive weights, index i+d pairs with -e_i")

    @model_validator(mode="after")
    def _check_alphas(self):
        if len(self.alphas) != 2 * self.dimension_d:
            raise ValueError(f"expected {2 * self.dimension_d} alphas, got {len(self.alphas)}")
        if not all(math.isfinite(a) and a > 0 for a in self.alphas):
            raise ValueError("all alphas must be finite and strictly positive")
        return self


class ProbVector(BaseModel):
    """Probability vector aligned with a StepSupport ordering."""

    model_config = ConfigDict(frozen=True)

    probs: Tuple[float, ...]

    @model_validator(mode="before")
    @classmethod
    def _accept_plain_list(cls, data: Any):
        if isinstance(data, (list, tuple, np.ndarray)):
            return {"probs": tuple(float(p) for p in data)}
        return data

    @field_validator("probs")
    @classmethod
    def _normalize(cls, probs):
        if not probs:
            raise ValueError("probability vector must be non-empty")
        if any(not math.isfinite(p) or p < 0 for p in probs):
            raise ValueError("probabilities must be finite and nonnegative")
        total = math.fsum(probs)
        if abs(total - 1.0) > SIMPLEX_RENORMALIZE_TOL:
            raise ValueError(f"probabilities sum to {total!r}, not 1")
        return tuple(p / total for p in probs)

    def as_array(self) -> np.ndarray:
        return np.asarray(self.probs, dtype=float)


class MixtureComponent(BaseModel):
    model_config = ConfigDict(frozen=True)

    probs: ProbVector
    weight: float = Field(..., gt=0)


class EnvironmentKind(str, Enum):
    DIRICHLET = "dirichlet"
    MIXTURE = "finite-mixture"
    DETERMINISTIC = "deterministic"


class EnvironmentSpec(BaseModel):
    """Law of the i.i.d. site vectors of a random environment."""

    model_config = ConfigDict(
        frozen=True,
        json_schema_extra={
            "example": {
                "kind": "dirichlet",
                "dirichlet": {"dimension_d": 2, "alphas": [2.0, 0.5, 0.5, 0.5]},
            }
        },
    )

    kind: EnvironmentKind
    dirichlet: Optional[DirichletParams] = None
    components: Tuple[MixtureComponent, ...] = ()
    probs: Optional[ProbVector] = None
    support: Optional[StepSupport] = Field(
        None, description="Defaults to the nearest-neighbour support"
    )

    @model_validator(mode="after")
    def _check_kind(self):
        if self.kind is EnvironmentKind.DIRICHLET:
            if self.dirichlet is None:
                raise ValueError("dirichlet environment requires 'dirichlet' parameters")
            nn = StepSupport.nearest_neighbour(self.dirichlet.dimension_d)
            if self.support is None:
                object.__setattr__(self, "support", nn)
            elif self.support.steps != nn.steps:
                raise ValueError("dirichlet environments use the nearest-neighbour support")
            return self

        vectors: List[ProbVector] = []
        if self.kind is EnvironmentKind.DETERMINISTIC:
            if self.probs is None:
                raise ValueError("deterministic environment requires 'probs'")
            vectors = [self.probs]
        else:
            if not self.components:
                raise ValueError("finite-mixture environment requires 'components'")
            total = math.fsum(c.weight for c in self.components)
            if abs(total - 1.0) > MIXTURE_WEIGHT_TOL:
                raise ValueError(f"mixture weights sum to {total!r}, not 1")
            vectors = [c.probs for c in self.components]

        if self.support is None:
            n = len(vectors[0].probs)
            if n % 2:
                raise ValueError("cannot infer a nearest-neighbour support from an odd-length vector")
            object.__setattr__(self, "support", StepSupport.nearest_neighbour(n // 2))
        for vec in vectors:
            if len(vec.probs) != len(self.support.steps):
                raise ValueError("probability vector length does not match the step support")
        return self

    @property
    def dimension(self) -> int:
        return self.support.dimension

    @classmethod
    def dirichlet_nn(cls, alphas) -> "EnvironmentSpec":
        alphas = tuple(float(a) for a in alphas)
        return cls(
            kind=EnvironmentKind.DIRICHLET,
            dirichlet=DirichletParams(dimension_d=len(alphas) // 2, alphas=alphas),
        )

    @classmethod
    def deterministic_nn(cls, probs) -> "EnvironmentSpec":
        return cls(kind=EnvironmentKind.DETERMINISTIC, probs=ProbVector(probs=tuple(probs)))


class DirectionSpec(BaseModel):
    """Direction of transience and the level lattice spacing."""

    model_config = ConfigDict(frozen=True)

    v_star: Tuple[int, ...] = Field((1, 0), description="Integer direction vector")
    h: int = Field(1, ge=1, description="Level lattice spacing")
    confirm_margin: Optional[int] = Field(
        None, ge=1, description="Levels past a candidate needed to confirm it (default 10*r0)"
    )

    @field_validator("v_star")
    @classmethod
    def _nonzero(cls, v):
        if not v or all(c == 0 for c in v):
            raise ValueError("v_star must be nonzero")
        return v

    def margin(self, radius_r0: int = 1) -> int:
        if self.confirm_margin is not None:
            return self.confirm_margin
        return settings.confirm_margin_factor * radius_r0

    @classmethod
    def axis(cls, dimension: int, index: int = 0, **kwargs) -> "DirectionSpec":
        v = [0] * dimension
        v[index] = 1
        return cls(v_star=tuple(v), **kwargs)


class PairMode(str, Enum):
    """How the two walks of a pair obtain their environment."""
    SHARED = "shared-environment"
    INDEPENDENT = "independent-environments"


class FunctionalKind(str, Enum):
    COORDINATE_SUP = "clipped-coordinate-sup"
    ENDPOINT = "clipped-endpoint"
    COORDINATE_AT_T = "clipped-coordinate-at-t"


class TestFunctional(BaseModel):
    """Bounded path functional F = clip(scale * g(path), -clip_bound, clip_bound)."""

    __test__ = False  # not a pytest class

    model_config = ConfigDict(frozen=True)

    kind: FunctionalKind = FunctionalKind.ENDPOINT
    clip_bound: float = Field(5.0, gt=0)
    coordinate: int = Field(0, ge=0)
    t: float = Field(1.0, ge=0)
    scale: float = Field(1.0, gt=0, description="Gain; values above 1 break the Lipschitz bound")


class EstimateWithCI(BaseModel):
    """Monte Carlo point estimate with its standard error."""

    value: float
    stderr: float
    replicates: int


class ExperimentName(str, Enum):
    REGEN_TAIL = "regen-tail"
    JOINT_REGEN = "joint-regen"
    QN_CURVE = "qn-curve"
    QUENCHED_VARIANCE = "quenched-variance"
    CLT_ENDPOINT = "clt-endpoint"
    DIRICHLET_DIAG = "dirichlet-diag"


class ExperimentConfig(BaseModel):
    """Declarative description of one experiment run."""

    model_config = ConfigDict(
        extra="forbid",
        json_schema_extra={
            "example": {
                "experiment": "qn-curve",
                "environment": {
                    "kind": "dirichlet",
                    "dirichlet": {"dimension_d": 2, "alphas": [2.0, 0.5, 0.5, 0.5]},
                },
                "n_grid": [64, 128, 256],
                "replicates": 200,
                "master_seed": 7,
            }
        },
    )

    experiment: ExperimentName
    environment: EnvironmentSpec
    direction: Optional[DirectionSpec] = None
    horizon: int = Field(1000, gt=0)
    replicates: int = Field(100, gt=0)
    envs: int = Field(50, gt=0)
    walks_per_env: int = Field(20, gt=0)
    n_grid: Optional[List[int]] = None
    stages: Optional[Tuple[int, int]] = Field(None, description="First and last stage exponent")
    b: float = Field(2.0, gt=1.0, le=2.0)
    T: int = Field(1, gt=0)
    functional: TestFunctional = TestFunctional()
    pair_mode: PairMode = PairMode.SHARED
    separations: List[int] = Field(default_factory=list)
    k_top: Optional[int] = Field(None, ge=2)
    gamma: float = Field(1.0, gt=0, le=1.0)
    c_grid: List[float] = Field(default_factory=lambda: [0.05, 0.1, 0.2, 0.5])
    velocity: Optional[List[float]] = None
    pilot_walks: int = Field(40, gt=0)
    draws: int = Field(10000, gt=1)
    normality_sigmas: float = Field(5.0, gt=0)
    master_seed: int = Field(0, ge=0, le=MAX_SEED)
    workers: Optional[int] = Field(None, gt=0)
    output_dir: Optional[str] = None

    @model_validator(mode="after")
    def _experiment_fields(self):
        if self.direction is None:
            self.direction = DirectionSpec.axis(self.environment.dimension)
        if len(self.direction.v_star) != self.environment.dimension:
            raise ValueError("direction.v_star dimension does not match the environment")
        if self.experiment is ExperimentName.QN_CURVE:
            if not self.n_grid:
                raise ValueError("qn-curve requires 'n_grid'")
            if any(n <= 0 for n in self.n_grid) or sorted(set(self.n_grid)) != list(self.n_grid):
                raise ValueError("n_grid must be strictly increasing positive integers")
        if self.experiment is ExperimentName.QUENCHED_VARIANCE:
            if self.stages is None:
                raise ValueError("quenched-variance requires 'stages'")
            if not 0 <= self.stages[0] <= self.stages[1]:
                raise ValueError("stages must satisfy 0 <= first <= last")
        if self.experiment is ExperimentName.DIRICHLET_DIAG and self.environment.dirichlet is None:
            raise ValueError("dirichlet-diag requires a dirichlet environment")
        if self.functional.coordinate >= self.environment.dimension:
            raise ValueError("functional.coordinate is outside the environment dimension")
        if self.velocity is not None and len(self.velocity) != self.environment.dimension:
            raise ValueError("velocity dimension does not match the environment")
        if any(s < 0 for s in self.separations):
            raise ValueError("separations must be nonnegative")
        return self


class ConditionReport(BaseModel):
    """Verdicts for the bounded-step and non-degeneracy conditions."""

    radius_r0: int
    admissible_steps: List[Tuple[int, ...]]
    bounded_steps: bool
    admissible_not_on_line: bool
    not_two_point: bool

    @computed_field
    @property
    def conditions_hold(self) -> bool:
        return self.bounded_steps and self.admissible_not_on_line and self.not_two_point


class DirichletReport(BaseModel):
    """Closed-form diagnostics of a Dirichlet environment law."""

    alphas: List[float]
    kappa: float
    t_gamma_sufficient: bool
    moment_order: float = Field(..., description="E[tau_1^p] is finite for every p below this")
    mean_drift: List[float]
    non_symmetric: bool
    fclt_applicable: bool


class RunManifest(BaseModel):
    """Provenance record written next to every result set."""

    experiment: ExperimentName
    artifact_version: str
    master_seed: int
    workers: int
    config: Dict[str, Any]
    started_at: str
    wall_time_seconds: float
    files: List[str]
    columns: Dict[str, List[str]]
