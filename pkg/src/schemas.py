from typing import Annotated, Any, Dict, List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field, TypeAdapter, ValidationError, field_validator, model_validator

from src.errors import ConfigError

SCHEMA_VERSION = 1


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


def _shift_levels(levels: List[int], finest: int) -> List[int]:
    """Same count and spacing as levels, moved so that the finest is `finest`"""
    if not levels:
        return []
    offset = finest - max(levels)
    return sorted({max(0, level + offset) for level in levels})


def _parse_complex(value: Any) -> str:
    text = str(value).strip()
    try:
        complex(text.replace("i", "j").replace(" ", ""))
    except ValueError:
        raise ValueError(f"invalid complex number '{text}'")
    return text


# ===== MESH SCHEMAS =====

class MeshConfig(StrictModel):
    level: int = Field(4, ge=0)
    refinement_levels: List[int] = Field(default_factory=lambda: [3, 4, 5])

    @field_validator("refinement_levels")
    @classmethod
    def _levels_valid(cls, value: List[int]) -> List[int]:
        if any(level < 0 for level in value):
            raise ValueError("mesh levels must be ≥ 0")
        return sorted(set(value))

    def with_level(self, level: int) -> "MeshConfig":
        return MeshConfig(level=level, refinement_levels=_shift_levels(self.refinement_levels, level))


# ===== EXPERIMENT SCHEMAS =====

class SpectrumConfig(StrictModel):
    command: Literal["spectrum"] = "spectrum"
    manifold: str = "sphere2"
    family: str = "identity"
    mesh: MeshConfig = Field(default_factory=MeshConfig)
    k: int = Field(12, ge=1)
    method: Literal["auto", "dense", "iterative"] = "auto"
    tau: Optional[float] = Field(None, gt=0)
    curvature_rule: Literal["weak", "quadrature"] = "weak"
    expected_index: Optional[int] = Field(None, ge=0)
    expected_nullity: Optional[int] = Field(None, ge=0)
    refinement_study: bool = True
    inertia_check: bool = True
    oracle_sections: int = Field(20, ge=0)
    oracle_level: int = Field(3, ge=0)
    two_form: str = "zero"
    general_level: int = Field(2, ge=0)
    general_strengths: List[float] = Field(default_factory=lambda: [0.0, 0.1, 0.2])
    conformal_charts: List[str] = Field(
        default_factory=lambda: [
            "mobius:2,0,0,1",
            "mobius:0.5,0,0,1",
            "mobius:1,0.5,0,1",
            "mobius:1,0,0.5,1",
            "mobius:1.5,0.5,0,1",
        ]
    )
    export_matrices: bool = False
    seed: int = 0

    def with_mesh_level(self, level: int) -> "SpectrumConfig":
        return self.model_copy(
            update={
                "mesh": self.mesh.with_level(level),
                "oracle_level": min(self.oracle_level, level),
                "general_level": min(self.general_level, level),
            }
        )


class BubbleRunConfig(StrictModel):
    command: Literal["bubble-run"] = "bubble-run"
    manifold: str = "sphere2"
    family: str = "identity"
    centers: List[str] = Field(default_factory=lambda: ["0"])
    schedule: List[float] = Field(default_factory=lambda: [4.0**-k for k in range(1, 7)])
    base_level: int = Field(4, ge=0)
    bubble_level: int = Field(4, ge=0)
    levels: List[int] = Field(default_factory=lambda: [3, 4])
    harmonicity_levels: List[int] = Field(default_factory=lambda: [3, 4, 5])
    n_eigs: int = Field(12, ge=1)
    delta: float = Field(0.5, gt=0, lt=1)
    bubble_delta: float = Field(0.5, gt=0, lt=1)
    cutoff_level: int = Field(5, ge=0)
    cutoff_deltas: List[float] = Field(default_factory=lambda: [0.5, 0.4, 0.3])
    accounting_k: Optional[int] = Field(None, ge=1)
    radii: List[float] = Field(default_factory=lambda: [0.3, 0.2, 0.1])
    energies: bool = True
    harmonicity: bool = True
    cutoff: bool = True
    lower_bound: bool = True
    upper_bound: bool = True
    accounting: bool = True
    seed: int = 0

    @field_validator("centers")
    @classmethod
    def _centers_valid(cls, value: List[str]) -> List[str]:
        if not value:
            raise ValueError("at least one bubble center is required")
        return [_parse_complex(v) for v in value]

    @field_validator("schedule")
    @classmethod
    def _schedule_valid(cls, value: List[float]) -> List[float]:
        if not value or min(value) <= 0:
            raise ValueError("scale schedule must be non-empty and positive")
        if any(b > a for a, b in zip(value, value[1:])):
            raise ValueError("scale schedule must be non-increasing")
        return value

    @field_validator("cutoff_deltas", "radii")
    @classmethod
    def _unit_interval(cls, value: List[float]) -> List[float]:
        if any(not 0.0 < v < 1.0 for v in value):
            raise ValueError("values must lie in (0, 1)")
        return value

    @model_validator(mode="after")
    def _accounting_in_range(self) -> "BubbleRunConfig":
        if self.accounting_k is not None and self.accounting_k > len(self.schedule):
            raise ValueError(f"accounting_k={self.accounting_k} exceeds the {len(self.schedule)} scales")
        return self

    def with_mesh_level(self, level: int) -> "BubbleRunConfig":
        return self.model_copy(
            update={
                "base_level": level,
                "bubble_level": level,
                "levels": _shift_levels(self.levels, level),
                "harmonicity_levels": _shift_levels(self.harmonicity_levels, level),
                "cutoff_level": level,
            }
        )


class NeckTestConfig(StrictModel):
    command: Literal["neck-test"] = "neck-test"
    lengths: List[float] = Field(default_factory=lambda: [8.0, 16.0, 32.0])
    no_neck_lengths: List[float] = Field(default_factory=lambda: [4.0, 6.0, 8.0])
    dt: float = Field(0.05, gt=0)
    n_theta: int = Field(32, ge=8)
    buffer: float = Field(0.1, gt=0, lt=1)
    delta: float = Field(0.1, gt=0, lt=1)
    poisson_length: float = Field(2.0, gt=0)
    poisson_steps: List[float] = Field(default_factory=lambda: [0.1, 0.05, 0.025])
    growth_limit: float = Field(2.0, gt=1)
    linfty_limit: float = Field(1.0, gt=0)
    source_inset: float = Field(3.0, ge=1)
    balance_tolerance: float = Field(0.01, gt=0)
    epsilon_threshold: float = Field(0.5, gt=0)
    non_conformal_tilt: float = 0.3
    seed: int = 0

    @field_validator("n_theta")
    @classmethod
    def _even(cls, value: int) -> int:
        if value % 2:
            raise ValueError("n_theta must be even")
        return value

    @field_validator("lengths", "no_neck_lengths")
    @classmethod
    def _sweep(cls, value: List[float]) -> List[float]:
        if len(value) < 2 or any(v <= 2.0 for v in value):
            raise ValueError("a sweep needs at least two half lengths above 2")
        return sorted(value)

    def with_mesh_level(self, level: int) -> "NeckTestConfig":
        # the cylinder has no mesh level
        return self


class SylvesterTestConfig(StrictModel):
    command: Literal["sylvester-test"] = "sylvester-test"
    trials: int = Field(100, ge=1)
    min_dim: int = Field(2, ge=1)
    max_dim: int = Field(200, ge=1, le=400)
    condition: float = Field(1e3, ge=1)
    pde_levels: List[int] = Field(default_factory=lambda: [2, 3])
    pde_manifold: str = "sphere2"
    pde_families: List[str] = Field(default_factory=lambda: ["identity", "constant"])
    seed: int = 0

    @model_validator(mode="after")
    def _dims(self) -> "SylvesterTestConfig":
        if self.min_dim > self.max_dim:
            raise ValueError(f"min_dim={self.min_dim} exceeds max_dim={self.max_dim}")
        return self

    def with_mesh_level(self, level: int) -> "SylvesterTestConfig":
        return self.model_copy(update={"pde_levels": _shift_levels(self.pde_levels, level)})


class EmbeddingTestConfig(StrictModel):
    command: Literal["embedding-test"] = "embedding-test"
    manifolds: List[str] = Field(default_factory=lambda: ["sphere2", "clifford"])
    lam: float = Field(4.0, ge=1)
    lambda_sweep: List[float] = Field(default_factory=lambda: [1.0, 2.0, 4.0])
    samples: int = Field(10_000, ge=10)
    min_constant: float = 1.0
    isometry_tolerance: float = Field(1e-10, gt=0)
    energy_level: int = Field(3, ge=0)
    seed: int = 0

    @field_validator("lambda_sweep")
    @classmethod
    def _lambdas(cls, value: List[float]) -> List[float]:
        if any(v < 1.0 for v in value):
            raise ValueError("augmentation needs λ ≥ 1")
        return value

    def with_mesh_level(self, level: int) -> "EmbeddingTestConfig":
        return self.model_copy(update={"energy_level": level})


ExperimentConfig = Annotated[
    Union[SpectrumConfig, BubbleRunConfig, NeckTestConfig, SylvesterTestConfig, EmbeddingTestConfig],
    Field(discriminator="command"),
]

_config_adapter = TypeAdapter(ExperimentConfig)

COMMANDS = ("spectrum", "bubble-run", "neck-test", "sylvester-test", "embedding-test")


def validation_messages(error: ValidationError) -> List[str]:
    """One "path: message" line per error"""
    lines = []
    for item in error.errors():
        path = ".".join(str(part) for part in item["loc"]) or "<config>"
        lines.append(f"{path}: {item['msg']}")
    return lines


def parse_config(data: Dict[str, Any]) -> ExperimentConfig:
    """Validate a raw config mapping into its experiment config"""
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    try:
        return _config_adapter.validate_python(data)
    except ValidationError as e:
        messages = validation_messages(e)
        raise ConfigError("; ".join(messages), {"errors": messages})


# ===== RESULT SCHEMAS =====

class AssertionResult(BaseModel):
    name: str
    status: Literal["PASS", "FAIL", "AMBIGUOUS"]
    measured: Optional[Any] = None
    threshold: Optional[Any] = None
    message: str = ""


class ExperimentSummary(BaseModel):
    schema_version: int = SCHEMA_VERSION
    command: str
    status: Literal["PASS", "FAIL", "AMBIGUOUS"]
    exit_code: int
    seed: int
    assertions: List[AssertionResult]
    artifacts: List[str]
    results: Dict[str, Any] = Field(default_factory=dict)
