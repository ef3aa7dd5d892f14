"""JSON configuration files.

Every file carries ``"schema_version": 1``; unknown keys are rejected so that a
typo in a grid name fails loudly instead of silently using a default.
"""
from __future__ import annotations

import json
from pathlib import Path
from typing import Annotated, Literal, Union

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, ValidationError, model_validator

from .errors import ConfigError
from .experiments import SweepConfig
from .filters import GaussianBelief
from .models import HmmSpec, L63Params

SCHEMA_VERSION = 1


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class L63Model(_Strict):
    kind: Literal["l63"] = "l63"
    dt: float = Field(gt=0)
    lam: float = Field(0.0, ge=0, alias="lambda")
    theta: float = 0.0
    sigma_q: float = Field(0.0, ge=0)
    sigma_r: float = Field(ge=0)
    sigma: float = 10.0
    rho: float = 28.0
    beta: float = 8.0 / 3.0
    H: list[list[float]] | None = None

    def params(self) -> L63Params:
        return L63Params(lam=self.lam, theta=self.theta, sigma_q=self.sigma_q, dt=self.dt,
                         sigma=self.sigma, rho=self.rho, beta=self.beta)

    def spec(self) -> HmmSpec:
        return HmmSpec.l63(self.params(), self.sigma_r, self.H)


class LinearModel(_Strict):
    kind: Literal["linear"]
    M: list[list[float]]
    H: list[list[float]]
    Q: list[list[float]]
    R: list[list[float]]

    def spec(self) -> HmmSpec:
        return HmmSpec(np.array(self.M), np.array(self.H), np.array(self.Q), np.array(self.R))


ModelConfig = Annotated[Union[L63Model, LinearModel], Field(discriminator="kind")]


class PriorConfig(_Strict):
    mean: list[float] | None = None
    cov: list[list[float]] | None = None
    attractor_samples: int = Field(20_000, ge=1000)
    attractor_thin: int = Field(10, ge=1)

    @model_validator(mode="after")
    def _both_or_neither(self):
        if (self.mean is None) != (self.cov is None):
            raise ValueError("prior needs both 'mean' and 'cov', or neither")
        return self

    def explicit(self) -> GaussianBelief | None:
        if self.mean is None:
            return None
        return GaussianBelief(np.array(self.mean), np.array(self.cov))


class _Versioned(_Strict):
    schema_version: Literal[1]
    seed: int | None = Field(None, ge=0, lt=2**64)


class SimulateConfig(_Versioned):
    model: ModelConfig
    T: int = Field(ge=0)
    x0: list[float] | None = None
    burn_in: int = Field(10_000, ge=0)


class AttributeConfig(_Versioned):
    model: ModelConfig
    prior: PriorConfig = PriorConfig()
    filter: Literal["kf", "enkf"] | None = None
    ensemble_size: int | None = Field(None, ge=2)
    inflation: float = Field(1.0, gt=0)


class SweepFile(_Versioned):
    lambda_grid: list[float] = Field(default_factory=lambda: np.linspace(0, 40, 10).tolist(), min_length=1)
    sigma_q_grid: list[float] = Field(default_factory=lambda: np.linspace(0.1, 0.5, 10).tolist(), min_length=1)
    sigma_r_grid: list[float] = Field(default_factory=lambda: np.linspace(0.1, 1.0, 10).tolist(), min_length=1)
    theta1: float = -140.0
    n_directions: int = Field(10, ge=1)
    n_eval_sequences: int = Field(100, ge=1)
    T: int = Field(20, ge=1)
    n_prob_segments: int = Field(50_000, ge=100)
    target_p: float = Field(0.01, gt=0, le=1)
    ensemble_size: int = Field(100, ge=2)
    inflation: float = Field(1.0, gt=0)
    conditioned: bool = True
    shared_prior: bool = False
    attractor_samples: int = Field(20_000, ge=1000)
    attractor_thin: int = Field(10, ge=1)
    dt: float = Field(0.01, gt=0)

    def sweep_config(self, seed: int) -> SweepConfig:
        kw = self.model_dump(exclude={"schema_version", "seed"})
        return SweepConfig(seed=seed, **kw)


class AttractorConfig(_Versioned):
    model: L63Model
    n_samples: int = Field(100_000, ge=1000)
    thin: int = Field(10, ge=1)
    grid_size: int = Field(101, ge=3)


class Ar1DemoConfig(_Versioned):
    a: float = Field(0.9, gt=-1, lt=1)
    noise_std: float = Field(1.0, gt=0)
    window: int = Field(24, ge=1)
    true_p: float = Field(0.01, gt=0, lt=1)
    n_grid: list[int] = Field(default_factory=lambda: [1000, 2000, 5000, 10000, 20000, 50000], min_length=1)
    n_boot: int = Field(200, ge=10)
    return_periods: list[float] = Field(
        default_factory=lambda: [25, 50, 100, 200, 500, 1000, 2000, 5000, 10000], min_length=1)
    timing_repeats: int = Field(3, ge=1)


def _format_errors(exc: ValidationError, path) -> str:
    lines = [f"{path}: invalid configuration"]
    for err in exc.errors():
        loc = ".".join(str(p) for p in err["loc"]) or "<root>"
        lines.append(f"  {loc}: {err['msg']}")
    return "\n".join(lines)


def load_config(path, schema: type[BaseModel]):
    """Parse and validate ``path`` against ``schema``; any problem raises :class:`ConfigError`."""
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ConfigError(f"{path}: cannot read configuration ({exc.strerror})") from None
    try:
        raw = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: line {exc.lineno} column {exc.colno}: {exc.msg}") from None
    try:
        return schema.model_validate(raw)
    except ValidationError as exc:
        raise ConfigError(_format_errors(exc, path)) from None
