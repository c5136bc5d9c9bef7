"""
Validated configuration models.

Every user-facing configuration object (link family, alignment grid,
SubLign hyperparameters, generator recipes, experiments) is a pydantic model
so JSON config files are checked on load and invalid values fail early with
a readable message.
"""

import itertools
import math
import re
from enum import Enum
from typing import Any, Dict, List, Optional, Tuple

import numpy as np
from scipy.special import expit
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

import censalign.config as cfg
from censalign.exceptions import ConfigError


class LinkFamily(str, Enum):
    SIGMOID = "sigmoid"
    IDENTITY = "identity"


class LinkSpec(BaseModel):
    """The (f, P) pair: link function f applied to a degree-P polynomial."""

    model_config = ConfigDict(frozen=True)

    family: LinkFamily = LinkFamily.SIGMOID
    degree: int = Field(default=1, ge=1)

    @model_validator(mode="before")
    @classmethod
    def _default_degree(cls, data: Any) -> Any:
        if isinstance(data, dict) and data.get("degree") is None:
            family = LinkFamily(data.get("family", LinkFamily.SIGMOID))
            data = {**data, "degree": cfg.DEFAULT_DEGREES[family.value]}
        return data

    @property
    def n_coefficients(self) -> int:
        return self.degree + 1

    @property
    def is_default_degree(self) -> bool:
        return self.degree == cfg.DEFAULT_DEGREES[self.family.value]

    def apply(self, u: np.ndarray) -> np.ndarray:
        """Evaluate f elementwise."""
        u = np.asarray(u, dtype=float)
        if self.family is LinkFamily.SIGMOID:
            return expit(u)
        return u.copy()

    def derivative(self, u: np.ndarray) -> np.ndarray:
        """f'(u) elementwise."""
        if self.family is LinkFamily.SIGMOID:
            s = self.apply(u)
            return s * (1.0 - s)
        return np.ones_like(np.asarray(u, dtype=float))

    @classmethod
    def parse(cls, family: str, degree: Optional[int] = None) -> "LinkSpec":
        try:
            return cls(family=LinkFamily(family.lower()), degree=degree)
        except (ValueError, ValidationError) as e:
            raise ConfigError(f"Invalid link specification '{family}': {e}") from e


class AlignmentGrid(BaseModel):
    """Uniform grid {0, step, 2 step, ..., delta_max} of candidate delays."""

    model_config = ConfigDict(frozen=True)

    delta_max: float = Field(default=cfg.DEFAULT_DELTA_MAX, gt=0)
    step: float = Field(default=cfg.DEFAULT_DELTA_STEP, gt=0)

    @model_validator(mode="after")
    def _step_divides_range(self) -> "AlignmentGrid":
        n_steps = round(self.delta_max / self.step)
        if n_steps < 1 or abs(n_steps * self.step - self.delta_max) > 1e-9 * max(
            1.0, self.delta_max
        ):
            raise ValueError(
                f"step {self.step} does not divide delta_max {self.delta_max}"
            )
        return self

    @property
    def size(self) -> int:
        return round(self.delta_max / self.step) + 1

    @property
    def points(self) -> np.ndarray:
        return np.linspace(0.0, self.delta_max, self.size)


class RegType(str, Enum):
    NONE = "none"
    L1 = "l1"
    L2 = "l2"


class CellType(str, Enum):
    GRU = "gru"
    VANILLA = "vanilla"


class SubLignConfig(BaseModel):
    """Hyperparameters of one SubLign fit."""

    model_config = ConfigDict(frozen=True)

    latent_dim: int = Field(default=5, ge=1)
    rnn_hidden: int = Field(default=100, ge=1)
    mlp_hidden: int = Field(default=50, ge=1)
    learning_rate: float = Field(default=0.01, gt=0)
    epochs: int = Field(default=cfg.DEFAULT_EPOCHS, ge=1)
    kl_weight: float = Field(default=cfg.DEFAULT_KL_WEIGHT, ge=0)
    reg_type: RegType = RegType.NONE
    reg_strength: float = Field(default=0.0, ge=0)
    grid: AlignmentGrid = Field(default_factory=AlignmentGrid)
    k_clusters: int = Field(default=2, ge=1)
    seed: int = 0
    cell: CellType = CellType.GRU
    n_mc: int = Field(default=1, ge=1)
    reverse: bool = False
    log_every: int = Field(default=cfg.LOG_EVERY_EPOCHS, ge=1)

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "SubLignConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid SubLign configuration: {e}") from e


class GeneratorFamily(str, Enum):
    SIGMOID = "sigmoid"
    QUADRATIC = "quadratic"
    SPLINE = "spline"


_CLI_FAMILY = re.compile(r"^(sigmoid|quad([1-6])|spline-(incr|any))$")


class GeneratorSpec(BaseModel):
    """Recipe of one synthetic benchmark."""

    model_config = ConfigDict(frozen=True)

    family: GeneratorFamily = GeneratorFamily.SIGMOID
    case: Optional[int] = Field(default=None, ge=1, le=6)
    monotone: bool = True
    n_patients: int = Field(default=cfg.GENERATOR_DEFAULTS["n_patients"], ge=1)
    n_visits: int = Field(default=cfg.GENERATOR_DEFAULTS["n_visits"], ge=1)
    noise_var: float = Field(default=cfg.GENERATOR_DEFAULTS["noise_var"], ge=0)
    t_max: float = Field(default=cfg.GENERATOR_DEFAULTS["t_max"], gt=0)
    subtype_prob: float = Field(default=cfg.GENERATOR_DEFAULTS["subtype_prob"], ge=0, le=1)
    seed: int = 0

    @model_validator(mode="after")
    def _case_matches_family(self) -> "GeneratorSpec":
        if self.family is GeneratorFamily.QUADRATIC and self.case is None:
            raise ValueError("quadratic family requires a case index in 1..6")
        return self

    @property
    def name(self) -> str:
        if self.family is GeneratorFamily.QUADRATIC:
            return f"quad{self.case}"
        if self.family is GeneratorFamily.SPLINE:
            return "spline-incr" if self.monotone else "spline-any"
        return "sigmoid"

    @classmethod
    def from_cli(cls, family: str, **kwargs: Any) -> "GeneratorSpec":
        """Build a spec from a CLI family name (sigmoid, quad1..quad6, spline-incr, spline-any)."""
        match = _CLI_FAMILY.match(family)
        if not match:
            raise ConfigError(f"Unknown generator family: {family}")
        if match.group(2):
            kwargs.update(family=GeneratorFamily.QUADRATIC, case=int(match.group(2)))
        elif match.group(3):
            kwargs.update(
                family=GeneratorFamily.SPLINE, monotone=match.group(3) == "incr"
            )
        else:
            kwargs.update(family=GeneratorFamily.SIGMOID)
        try:
            return cls(**kwargs)
        except ValidationError as e:
            raise ConfigError(f"Invalid generator specification: {e}") from e


class Method(str, Enum):
    SUBLIGN = "sublign"
    SUBNOLIGN = "subnolign"
    KMEANS_LOSS = "kmeans-loss"
    IDENTIFY = "identify"


class ExperimentConfig(BaseModel):
    """One synthetic experiment: data recipe, methods, trials and search grid."""

    model_config = ConfigDict(frozen=True)

    generator: GeneratorSpec = Field(default_factory=GeneratorSpec)
    methods: List[Method] = Field(
        default_factory=lambda: [Method.SUBLIGN, Method.SUBNOLIGN, Method.KMEANS_LOSS]
    )
    n_trials: int = Field(default=5, ge=1)
    split_fractions: Tuple[float, float, float] = (0.6, 0.2, 0.2)
    preset: Optional[str] = "fast"
    hyperparameter_grid: Optional[Dict[str, List[Any]]] = None
    sublign: SubLignConfig = Field(default_factory=SubLignConfig)
    missing_rate: float = Field(default=0.0, ge=0, le=1)
    censor_window: Optional[float] = Field(default=None, ge=0)
    seed: int = 0
    max_workers: int = Field(default=cfg.MAX_WORKERS, ge=1)

    @field_validator("split_fractions")
    @classmethod
    def _fractions_sum_to_one(cls, value: Tuple[float, float, float]):
        if any(f < 0 for f in value) or not math.isclose(sum(value), 1.0, abs_tol=1e-9):
            raise ValueError(f"split fractions must be non-negative and sum to 1: {value}")
        return value

    @model_validator(mode="after")
    def _grid_source(self) -> "ExperimentConfig":
        if self.hyperparameter_grid is None and self.preset not in cfg.PRESETS:
            raise ValueError(f"unknown preset '{self.preset}'")
        return self

    @classmethod
    def from_dict(cls, data: Dict[str, Any]) -> "ExperimentConfig":
        try:
            return cls.model_validate(data)
        except ValidationError as e:
            raise ConfigError(f"Invalid experiment configuration: {e}") from e

    def grid_points(self) -> List[SubLignConfig]:
        """Expand the hyperparameter grid into concrete SubLign configs (stable order)."""
        grid = self.hyperparameter_grid or cfg.PRESETS[self.preset]
        unknown = set(grid) - set(SubLignConfig.model_fields)
        if unknown:
            raise ConfigError(f"Unknown hyperparameters in grid: {sorted(unknown)}")
        keys = sorted(grid)
        base = self.sublign.model_dump()
        points = []
        seen = set()
        for combo in itertools.product(*(grid[k] for k in keys)):
            values = dict(zip(keys, combo))
            # regularization strength is meaningless without a type and vice versa
            if values.get("reg_type", base["reg_type"]) in ("none", RegType.NONE):
                values["reg_strength"] = 0.0
            elif values.get("reg_strength", base["reg_strength"]) == 0.0:
                values["reg_type"] = "none"
            key = tuple(sorted((k, str(v)) for k, v in values.items()))
            if key in seen:
                continue
            seen.add(key)
            points.append(SubLignConfig.from_dict({**base, **values}))
        return points
