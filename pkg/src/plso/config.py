"""Run configuration: environment defaults, config files and flag overrides."""

from __future__ import annotations

import math
import os
from collections.abc import Mapping
from pathlib import Path
from typing import Any, Literal

import numpy as np
import yaml
from dotenv import find_dotenv, load_dotenv
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from plso.apg import DEFAULT_OUTER_ITERS, ApgConfig
from plso.kalman import DEFAULT_PHASE_MIN_SAMPLES
from plso.logging_utils import get_logger
from plso.models import STATIONARY, LogVarianceField, ModelParams
from plso.oscillator import hz_to_radians
from plso.selection import DEFAULT_LAMBDA_GRID, DEFAULT_PROMINENCE, SelectionConfig

logger = get_logger(__name__)

ENV_OUTPUT_DIR = "PLSO_OUTPUT_DIR"
DEFAULT_OUTPUT_DIR = "./plso-output"
DEFAULT_N_SAMPLES = 200
# Default noise-floor cutoff as a fraction of the sampling rate (80% of Nyquist)
DEFAULT_CUTOFF_FRACTION = 0.4

load_dotenv(find_dotenv())


def default_output_dir() -> Path:
    """Output directory from PLSO_OUTPUT_DIR, falling back to ./plso-output."""
    return Path(os.path.expanduser(os.getenv(ENV_OUTPUT_DIR, DEFAULT_OUTPUT_DIR)))


def _samples_per_window(window_seconds: float, sampling_rate: float) -> int:
    exact = window_seconds * sampling_rate
    n = int(round(exact))
    if not math.isclose(exact, n, rel_tol=0.0, abs_tol=1e-6):
        raise ValueError(
            f"{window_seconds} s at {sampling_rate} Hz is not a whole number of samples"
        )
    return n


class RunConfig(BaseModel):
    """Settings of a fit, decomposition or sampling run."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_path: Path | None = None
    sampling_rate: float = Field(..., gt=0, description="Sampling rate f_s in Hz")
    window_seconds: float | None = Field(None, gt=0)
    window_samples: int | None = Field(None, ge=2)
    n_components: int | None = Field(None, ge=1)
    component_candidates: list[int] | None = None
    smoothness: float | Literal["cv", "stationary"] = "cv"
    lambda_grid: list[float | str] = Field(default_factory=lambda: list(DEFAULT_LAMBDA_GRID))
    cutoff_hz: float | None = Field(None, gt=0)
    n_samples: int = Field(DEFAULT_N_SAMPLES, ge=1)
    phase_min_samples: int = Field(DEFAULT_PHASE_MIN_SAMPLES, ge=1)
    seed: int = Field(0, ge=0)
    output_dir: Path = Field(default_factory=default_output_dir)
    optimizer: ApgConfig = Field(default_factory=ApgConfig)
    freeze_center_freqs: list[bool] | None = None
    outer_iters: int = Field(DEFAULT_OUTER_ITERS, ge=0)
    prominence: float = Field(DEFAULT_PROMINENCE, gt=0)
    refit_theta_in_cv: bool = True

    @field_validator("smoothness", mode="before")
    @classmethod
    def _coerce_smoothness(cls, v: Any) -> Any:
        if isinstance(v, str):
            lowered = v.strip().lower()
            if lowered in ("cv", STATIONARY):
                return lowered
            try:
                v = float(lowered)
            except ValueError:
                raise ValueError(
                    f"smoothness must be a number, 'cv' or '{STATIONARY}', got {v!r}"
                ) from None
        if not math.isfinite(v) or v < 0:
            raise ValueError(f"smoothness must be a finite number >= 0, got {v}")
        return float(v)

    @field_validator("lambda_grid", mode="before")
    @classmethod
    def _coerce_grid(cls, v: Any) -> list[float | str]:
        grid: list[float | str] = []
        for value in v:
            if isinstance(value, str) and value.strip().lower() == STATIONARY:
                grid.append(STATIONARY)
            else:
                grid.append(float(value))
        if not grid:
            raise ValueError("lambda_grid must not be empty")
        return grid

    @model_validator(mode="after")
    def _check_consistency(self) -> RunConfig:
        if (self.window_seconds is None) == (self.window_samples is None):
            raise ValueError("give exactly one of window_seconds and window_samples")
        if (self.n_components is None) == (self.component_candidates is None):
            raise ValueError("give exactly one of n_components and component_candidates")
        if self.component_candidates is not None and (
            not self.component_candidates or min(self.component_candidates) < 1
        ):
            raise ValueError("component_candidates must be a non-empty list of J >= 1")
        if self.window_len < 2:
            raise ValueError(f"windows must hold at least 2 samples, got {self.window_len}")
        if self.resolved_cutoff_hz >= self.sampling_rate / 2:
            raise ValueError(
                f"cutoff {self.resolved_cutoff_hz} Hz must lie below the Nyquist "
                f"frequency {self.sampling_rate / 2} Hz"
            )
        if self.freeze_center_freqs is not None:
            if self.n_components is None:
                raise ValueError("freeze_center_freqs requires a fixed n_components")
            if len(self.freeze_center_freqs) != self.n_components:
                raise ValueError(
                    f"{len(self.freeze_center_freqs)} freeze flags for "
                    f"{self.n_components} components"
                )
        return self

    @property
    def delta(self) -> float:
        return 1.0 / self.sampling_rate

    @property
    def window_len(self) -> int:
        if self.window_samples is not None:
            return self.window_samples
        assert self.window_seconds is not None
        return _samples_per_window(self.window_seconds, self.sampling_rate)

    @property
    def resolved_cutoff_hz(self) -> float:
        if self.cutoff_hz is not None:
            return self.cutoff_hz
        return DEFAULT_CUTOFF_FRACTION * self.sampling_rate

    def selection_config(self) -> SelectionConfig:
        return SelectionConfig(
            delta=self.delta,
            cutoff_hz=self.resolved_cutoff_hz,
            prominence=self.prominence,
            outer_iters=self.outer_iters,
            optimizer=self.optimizer,
            refit_theta=self.refit_theta_in_cv,
            frozen=tuple(self.freeze_center_freqs) if self.freeze_center_freqs else None,
        )


def read_config_file(path: str | Path) -> dict[str, Any]:
    """Parse a YAML or JSON config file into a mapping."""
    path = Path(path)
    with open(path, encoding="utf-8") as f:
        data = yaml.safe_load(f)
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"config file {path} must hold a mapping, got {type(data).__name__}")
    return data


def load_run_config(
    path: str | Path | None = None, overrides: Mapping[str, Any] | None = None
) -> RunConfig:
    """Merge a config file with flag overrides and validate the result.

    Overrides set to None are ignored. An ``optimizer`` override is merged
    into the file's optimizer section key by key.

    Raises:
        pydantic.ValidationError: If the merged settings are invalid.
    """
    data = read_config_file(path) if path is not None else {}
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        if key == "optimizer" and isinstance(data.get("optimizer"), dict):
            data["optimizer"] = {**data["optimizer"], **value}
        else:
            data[key] = value
    config = RunConfig.model_validate(data)
    logger.debug(f"run config: {config.model_dump(mode='json')}")
    return config


class GenerativeSpec(BaseModel):
    """A J-component piecewise-stationary model to simulate from."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    sampling_rate: float = Field(..., gt=0)
    window_len: int = Field(..., ge=2)
    center_freqs_hz: list[float]
    lengthscales_s: list[float]
    log_powers: list[list[float]] = Field(..., description="J x M window log powers")
    noise_var: float = Field(..., gt=0)

    @model_validator(mode="after")
    def _check_shapes(self) -> GenerativeSpec:
        n = len(self.center_freqs_hz)
        if len(self.lengthscales_s) != n or len(self.log_powers) != n:
            raise ValueError(
                "center_freqs_hz, lengthscales_s and log_powers must have one entry "
                "per component"
            )
        if len({len(row) for row in self.log_powers}) != 1:
            raise ValueError("every log_powers row must cover the same windows")
        return self

    @property
    def delta(self) -> float:
        return 1.0 / self.sampling_rate

    def to_params(self) -> ModelParams:
        return ModelParams(
            delta=self.delta,
            obs_noise_var=self.noise_var,
            lengthscales=self.lengthscales_s,
            center_freqs=[hz_to_radians(f, self.delta) for f in self.center_freqs_hz],
        )

    def to_field(self) -> LogVarianceField:
        return LogVarianceField(values=np.asarray(self.log_powers), window_len=self.window_len)


def load_generative_spec(path: str | Path) -> GenerativeSpec:
    return GenerativeSpec.model_validate(read_config_file(path))
