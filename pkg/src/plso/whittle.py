"""Windowed Whittle likelihood, random-walk log prior and their derivatives."""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, field_serializer, field_validator

from plso.errors import DataError, NumericalError
from plso.logging_utils import get_logger
from plso.models import (
    DEFAULT_LOG_POWER_BOUND,
    STATIONARY,
    LogVarianceField,
    ModelParams,
    Periodogram,
)
from plso.oscillator import default_max_lengthscale, spectral_shapes

logger = get_logger(__name__)

GAMMA_FLOOR = 1e-300


class ObjectiveReport(BaseModel):
    """Value and gradient of the penalized Whittle objective at one point."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    log_lik: float
    log_prior: float
    total: float
    grad: np.ndarray

    @field_validator("grad", mode="before")
    @classmethod
    def _coerce_grad(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype=np.float64)
        arr.flags.writeable = False
        return arr

    @field_serializer("grad")
    def _serialize_grad(self, grad: np.ndarray) -> list[list[float]]:
        return grad.tolist()


def periodogram(observations: np.ndarray, window_len: int) -> Periodogram:
    """Squared DFT magnitude of each non-overlapping window, divided by N.

    Raises:
        ValueError: If ``window_len`` < 2.
        DataError: If the record length is not a multiple of ``window_len``.
    """
    y = np.asarray(observations, dtype=np.float64)
    if y.ndim != 1:
        raise DataError(f"observations must be a 1-D series, got shape {y.shape}")
    if window_len < 2:
        raise ValueError(f"window_len must be >= 2, got {window_len}")
    if y.size == 0 or y.size % window_len:
        usable = (y.size // window_len) * window_len
        raise DataError(
            f"{y.size} samples do not split into windows of {window_len}; "
            f"truncate the record to {usable} samples"
        )
    windows = y.reshape(-1, window_len)
    values = np.abs(np.fft.fft(windows, axis=1)) ** 2 / window_len
    return Periodogram(values=values, window_len=window_len)


def _check_shapes(pg: Periodogram, params: ModelParams, psi: LogVarianceField) -> None:
    if psi.window_len != pg.window_len or psi.n_windows != pg.n_windows:
        raise DataError(
            f"log-variance field covers {psi.n_windows} windows of {psi.window_len}, "
            f"periodogram covers {pg.n_windows} windows of {pg.window_len}"
        )
    if psi.n_components != params.n_components:
        raise DataError(
            f"log-variance field has {psi.n_components} components, "
            f"model has {params.n_components}"
        )


def _psd_matrix(shapes: np.ndarray, noise_var: float, psi_values: np.ndarray) -> np.ndarray:
    per_component = np.exp(psi_values).T[:, :, None] * shapes[None, :, :]
    gamma = noise_var + per_component.sum(axis=1)
    if not np.all(np.isfinite(gamma)) or np.any(gamma < GAMMA_FLOOR):
        raise NumericalError(
            "model PSD is non-finite or below the numerical floor", stage="whittle"
        )
    return gamma


def _window_terms(pg_values: np.ndarray, gamma: np.ndarray) -> np.ndarray:
    return -0.5 * np.sum(np.log(gamma) + pg_values / gamma, axis=1)


def _loglik_grad(
    shapes: np.ndarray, psi_values: np.ndarray, pg_values: np.ndarray, gamma: np.ndarray
) -> np.ndarray:
    residual = 1.0 / gamma - pg_values / gamma**2
    return -0.5 * np.exp(psi_values) * (shapes @ residual.T)


def _prior_value(psi_values: np.ndarray, smoothness: float | str) -> float:
    diffs = np.diff(psi_values, axis=1)
    if smoothness == STATIONARY:
        return 0.0 if not np.any(diffs) else -math.inf
    lam = float(smoothness)
    if lam < 0:
        raise ValueError(f"smoothness must be >= 0, got {lam}")
    if lam == 0.0 or diffs.size == 0:
        return 0.0
    return -0.5 * lam * float(np.sum(diffs**2))


def model_psd(params: ModelParams, psi: LogVarianceField) -> np.ndarray:
    """M x N matrix of model PSD values, noise floor included once."""
    shapes = spectral_shapes(params, psi.window_len)
    return _psd_matrix(shapes, params.obs_noise_var, psi.values)


def whittle_loglik_per_window(
    pg: Periodogram, params: ModelParams, psi: LogVarianceField
) -> np.ndarray:
    _check_shapes(pg, params, psi)
    return _window_terms(pg.values, model_psd(params, psi))


def whittle_loglik(pg: Periodogram, params: ModelParams, psi: LogVarianceField) -> float:
    """Whittle log-likelihood summed over windows.

    Window terms are combined with ``math.fsum`` so the result does not depend
    on window order.
    """
    value = math.fsum(whittle_loglik_per_window(pg, params, psi))
    if not math.isfinite(value):
        raise NumericalError("Whittle log-likelihood is not finite", stage="whittle")
    return value


def log_prior(psi: LogVarianceField, smoothness: float | str) -> float:
    """Random-walk log prior -(lambda/2) sum_j sum_{m>=2} (psi_jm - psi_j,m-1)^2.

    With ``smoothness == "stationary"`` the prior is 0 on constant rows and
    -inf elsewhere.
    """
    return _prior_value(psi.values, smoothness)


def grad_loglik(
    pg: Periodogram, params: ModelParams, psi: LogVarianceField
) -> np.ndarray:
    """Analytic gradient of :func:`whittle_loglik` with respect to psi (J x M)."""
    _check_shapes(pg, params, psi)
    shapes = spectral_shapes(params, psi.window_len)
    gamma = _psd_matrix(shapes, params.obs_noise_var, psi.values)
    return _loglik_grad(shapes, psi.values, pg.values, gamma)


def lipschitz_bound(
    pg: Periodogram,
    params: ModelParams,
    *,
    log_power_bound: float = DEFAULT_LOG_POWER_BOUND,
    max_lengthscale: float | None = None,
) -> float:
    """Global Lipschitz constant of the Whittle gradient inside the psi box.

    C = (J M N C_alpha C_psi / s2) (1 + C_I / s2), where s2 is the noise
    variance, C_I the largest periodogram entry, C_psi = exp(log_power_bound)
    and C_alpha the peak of the widest admissible spectral shape.
    """
    l_max = max_lengthscale or params.max_lengthscale
    if l_max is None:
        l_max = default_max_lengthscale(params.delta, pg.window_len)
    rho_max = math.exp(-params.delta / l_max)
    c_alpha = (1.0 + rho_max) / (1.0 - rho_max)
    noise = params.obs_noise_var
    scale = params.n_components * pg.n_windows * pg.window_len
    return (
        scale * c_alpha * math.exp(log_power_bound) / noise
    ) * (1.0 + pg.max_power / noise)


def evaluate_objective(
    pg: Periodogram, params: ModelParams, psi: LogVarianceField
) -> ObjectiveReport:
    log_lik = whittle_loglik(pg, params, psi)
    prior = log_prior(psi, params.smoothness)
    return ObjectiveReport(
        log_lik=log_lik,
        log_prior=prior,
        total=log_lik + prior,
        grad=grad_loglik(pg, params, psi),
    )
