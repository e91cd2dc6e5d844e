from __future__ import annotations

import math
from typing import Any, Literal

import numpy as np
from pydantic import (
    BaseModel,
    ConfigDict,
    Field,
    field_serializer,
    field_validator,
    model_validator,
)

STATIONARY = "stationary"
DEFAULT_LOG_POWER_BOUND = 30.0


def _frozen_array(value: Any, ndim: int, name: str) -> np.ndarray:
    """Coerce ``value`` into a read-only float64 array with ``ndim`` dimensions."""
    arr = np.array(value, dtype=np.float64, copy=True)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def _float_tuple(value: Any) -> tuple[float, ...]:
    return tuple(float(v) for v in np.atleast_1d(np.asarray(value, dtype=np.float64)))


class ModelParams(BaseModel):
    """Hyperparameters of a PLSO model: smoothness, noise floor and oscillator shapes."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: float = Field(..., gt=0, description="Sampling interval in seconds")
    smoothness: float | Literal["stationary"] = Field(
        0.0,
        description="Random-walk prior weight lambda, or 'stationary' for lambda = inf",
    )
    obs_noise_var: float = Field(..., gt=0, description="Observation noise variance")
    lengthscales: tuple[float, ...] = Field(
        ..., description="Per-component decay lengthscales l_j in seconds"
    )
    center_freqs: tuple[float, ...] = Field(
        ..., description="Per-component centre frequencies in radians per sample"
    )
    max_lengthscale: float | None = Field(
        None, gt=0, description="Upper bound l_max on every lengthscale"
    )

    @field_validator("smoothness", mode="before")
    @classmethod
    def _coerce_smoothness(cls, v: Any) -> Any:
        if isinstance(v, str):
            if v.lower() == STATIONARY:
                return STATIONARY
            raise ValueError(f"smoothness must be a number or '{STATIONARY}'")
        v = float(v)
        if math.isinf(v) and v > 0:
            return STATIONARY
        if not math.isfinite(v) or v < 0:
            raise ValueError("smoothness must be a finite number >= 0")
        return v

    @field_validator("lengthscales", "center_freqs", mode="before")
    @classmethod
    def _coerce_sequences(cls, v: Any) -> tuple[float, ...]:
        return _float_tuple(v)

    @model_validator(mode="after")
    def _check_components(self) -> ModelParams:
        n = len(self.lengthscales)
        if n < 1:
            raise ValueError("at least one oscillator component is required")
        if len(self.center_freqs) != n:
            raise ValueError(
                f"lengthscales ({n}) and center_freqs ({len(self.center_freqs)}) "
                "must have the same length"
            )
        for lengthscale in self.lengthscales:
            if not (math.isfinite(lengthscale) and lengthscale > 0):
                raise ValueError(f"lengthscale {lengthscale} must be finite and > 0")
            if self.max_lengthscale is not None and lengthscale > self.max_lengthscale:
                raise ValueError(
                    f"lengthscale {lengthscale} exceeds max_lengthscale "
                    f"{self.max_lengthscale}"
                )
            if math.exp(-self.delta / lengthscale) <= 0.0:
                raise ValueError(
                    f"lengthscale {lengthscale} is too short for delta {self.delta}"
                )
        for omega in self.center_freqs:
            if not 0.0 <= omega <= math.pi:
                raise ValueError(f"center frequency {omega} must lie in [0, pi]")
        return self

    @property
    def n_components(self) -> int:
        return len(self.lengthscales)

    @property
    def is_stationary(self) -> bool:
        return self.smoothness == STATIONARY

    @property
    def lambda_value(self) -> float:
        return math.inf if self.is_stationary else float(self.smoothness)

    @property
    def decay(self) -> np.ndarray:
        """Per-component AR(1) coefficients rho_j = exp(-delta / l_j)."""
        return np.exp(-self.delta / np.asarray(self.lengthscales))

    def replace(self, **changes: Any) -> ModelParams:
        """Return a validated copy with ``changes`` applied."""
        return type(self).model_validate({**self.model_dump(), **changes})


class LogVarianceField(BaseModel):
    """Window-level log powers psi[j, m] = log sigma^2_{j,m}."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    values: np.ndarray
    window_len: int = Field(..., ge=2, description="Samples per window (N)")
    log_power_bound: float = Field(
        DEFAULT_LOG_POWER_BOUND, gt=0, description="Box bound log C_psi on |psi|"
    )

    @field_validator("values", mode="before")
    @classmethod
    def _coerce_values(cls, v: Any) -> np.ndarray:
        return _frozen_array(v, 2, "values")

    @model_validator(mode="after")
    def _check_values(self) -> LogVarianceField:
        if self.values.shape[0] < 1 or self.values.shape[1] < 1:
            raise ValueError(f"values must be non-empty, got shape {self.values.shape}")
        if not np.all(np.isfinite(self.values)):
            raise ValueError("log powers must be finite")
        worst = float(np.max(np.abs(self.values)))
        if worst > self.log_power_bound:
            raise ValueError(
                f"|psi| = {worst} exceeds the box bound {self.log_power_bound}"
            )
        return self

    @field_serializer("values")
    def _serialize_values(self, values: np.ndarray) -> list[list[float]]:
        return values.tolist()

    @property
    def n_components(self) -> int:
        return int(self.values.shape[0])

    @property
    def n_windows(self) -> int:
        return int(self.values.shape[1])

    @property
    def n_samples(self) -> int:
        return self.n_windows * self.window_len

    @property
    def powers(self) -> np.ndarray:
        return np.exp(self.values)

    def with_values(self, values: np.ndarray) -> LogVarianceField:
        return LogVarianceField(
            values=values,
            window_len=self.window_len,
            log_power_bound=self.log_power_bound,
        )


class LatentTrajectory(BaseModel):
    """Stacked oscillator states z[k, j] = (Re z_{j,k}, Im z_{j,k})."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    states: np.ndarray
    delta: float = Field(..., gt=0)

    @field_validator("states", mode="before")
    @classmethod
    def _coerce_states(cls, v: Any) -> np.ndarray:
        arr = _frozen_array(v, 3, "states")
        if arr.shape[2] != 2:
            raise ValueError(f"states must have shape (K, J, 2), got {arr.shape}")
        return arr

    @property
    def real_parts(self) -> np.ndarray:
        """K x J matrix of Re z_{j,k}, the parts that reach the observations."""
        return self.states[:, :, 0]


class SpectrumGrid(BaseModel):
    """Component spectra and total PSD evaluated on the DFT grid of one window."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    freqs: np.ndarray
    per_component: np.ndarray
    total: np.ndarray

    @field_validator("freqs", "total", mode="before")
    @classmethod
    def _coerce_vectors(cls, v: Any) -> np.ndarray:
        return _frozen_array(v, 1, "spectrum vector")

    @field_validator("per_component", mode="before")
    @classmethod
    def _coerce_components(cls, v: Any) -> np.ndarray:
        return _frozen_array(v, 2, "per_component")

    @model_validator(mode="after")
    def _check_shapes(self) -> SpectrumGrid:
        n = self.freqs.shape[0]
        if self.total.shape != (n,) or self.per_component.shape[1] != n:
            raise ValueError("freqs, per_component and total must share the grid size")
        if np.any(self.per_component < 0) or np.any(self.total < 0):
            raise ValueError("spectral densities must be nonnegative")
        return self


class Periodogram(BaseModel):
    """Per-window squared DFT magnitudes normalized by the window length."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    values: np.ndarray
    window_len: int = Field(..., ge=2)

    @field_validator("values", mode="before")
    @classmethod
    def _coerce_values(cls, v: Any) -> np.ndarray:
        return _frozen_array(v, 2, "values")

    @model_validator(mode="after")
    def _check_values(self) -> Periodogram:
        if self.values.shape[1] != self.window_len:
            raise ValueError(
                f"periodogram has {self.values.shape[1]} bins, expected {self.window_len}"
            )
        if not np.all(np.isfinite(self.values)) or np.any(self.values < 0):
            raise ValueError("periodogram entries must be finite and nonnegative")
        return self

    @property
    def n_windows(self) -> int:
        return int(self.values.shape[0])

    @property
    def max_power(self) -> float:
        """C_I, the largest periodogram entry."""
        return float(np.max(self.values))
