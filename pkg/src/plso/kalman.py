"""Stage-2 inference: Kalman filtering, RTS smoothing and posterior sampling.

The 2J-dimensional state stacks (Re z_j, Im z_j) for every component; only
the real parts are observed.
"""

from __future__ import annotations

import math
from typing import Any

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator
from scipy.linalg import LinAlgError, block_diag, cho_factor, cho_solve

from plso.errors import DataError, NumericalError
from plso.logging_utils import get_logger
from plso.models import LogVarianceField, ModelParams
from plso.oscillator import rotation_matrix

logger = get_logger(__name__)

DEFAULT_CI_WIDTH = 1.96
DEFAULT_PHASE_LEVEL = 0.95
DEFAULT_PHASE_MIN_SAMPLES = 50
DEGENERATE_RESULTANT = 0.1
# Trajectories drawn per backward pass; bounds the scratch normals to chunk x K x 2J
DEFAULT_FFBS_CHUNK = 64
_PSD_TOL = 1e-9


def _readonly(value: Any, ndim: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-dimensional, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


def wrap_phase(angle: np.ndarray | float) -> np.ndarray:
    """Wrap angles into (-pi, pi]."""
    wrapped = np.mod(np.asarray(angle, dtype=np.float64) + math.pi, 2 * math.pi) - math.pi
    return np.where(wrapped <= -math.pi, math.pi, wrapped)


class FilterResult(BaseModel):
    """Filtered and one-step predicted moments of every state."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    filtered_means: np.ndarray
    filtered_covs: np.ndarray
    predicted_means: np.ndarray
    predicted_covs: np.ndarray
    transition: np.ndarray
    loglik: float
    heldout_loglik: float = 0.0

    @field_validator("filtered_means", "predicted_means", "transition", mode="before")
    @classmethod
    def _coerce_matrices(cls, v: Any) -> np.ndarray:
        return _readonly(v, 2, "matrix")

    @field_validator("filtered_covs", "predicted_covs", mode="before")
    @classmethod
    def _coerce_covs(cls, v: Any) -> np.ndarray:
        return _readonly(v, 3, "covariances")


class PosteriorTrajectories(BaseModel):
    """Smoothed state means and covariances given the whole record."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    means: np.ndarray
    covs: np.ndarray
    loglik: float

    @field_validator("means", mode="before")
    @classmethod
    def _coerce_means(cls, v: Any) -> np.ndarray:
        return _readonly(v, 2, "means")

    @field_validator("covs", mode="before")
    @classmethod
    def _coerce_covs(cls, v: Any) -> np.ndarray:
        return _readonly(v, 3, "covs")

    @property
    def n_components(self) -> int:
        return self.means.shape[1] // 2


class SampleEnsemble(BaseModel):
    """Joint posterior state trajectories drawn by forward-filter backward-sampling."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    samples: np.ndarray
    seed: int = Field(..., ge=0)

    @field_validator("samples", mode="before")
    @classmethod
    def _coerce_samples(cls, v: Any) -> np.ndarray:
        arr = _readonly(v, 3, "samples")
        if arr.shape[0] < 1:
            raise ValueError("an ensemble needs at least one sample")
        return arr

    @property
    def n_samples(self) -> int:
        return int(self.samples.shape[0])


class PhaseEstimate(BaseModel):
    """Circular mean phase of one component with empirical credible bounds."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    component: int = Field(..., ge=0)
    level: float = Field(..., gt=0, lt=1)
    mean_phase: np.ndarray
    lower: np.ndarray
    upper: np.ndarray
    degenerate: np.ndarray

    @field_validator("mean_phase", "lower", "upper", mode="before")
    @classmethod
    def _coerce_phase(cls, v: Any) -> np.ndarray:
        return _readonly(v, 1, "phase")

    @field_validator("degenerate", mode="before")
    @classmethod
    def _coerce_flags(cls, v: Any) -> np.ndarray:
        arr = np.array(v, dtype=bool)
        arr.flags.writeable = False
        return arr

    @field_serializer("mean_phase", "lower", "upper", "degenerate")
    def _serialize_arrays(self, arr: np.ndarray) -> list:
        return arr.tolist()


def transition_matrix(params: ModelParams) -> np.ndarray:
    """Block-diagonal A with blocks rho_j R(w_j)."""
    blocks = [
        rho * rotation_matrix(omega)
        for rho, omega in zip(params.decay, params.center_freqs)
    ]
    return block_diag(*blocks)


def observation_vector(n_components: int) -> np.ndarray:
    """H = (1, 0, 1, 0, ...): the observation is the sum of the real parts."""
    h = np.zeros(2 * n_components)
    h[0::2] = 1.0
    return h


def _check_inputs(
    observations: np.ndarray, params: ModelParams, psi: LogVarianceField
) -> np.ndarray:
    y = np.asarray(observations, dtype=np.float64)
    if y.ndim != 1:
        raise DataError(f"observations must be a 1-D series, got shape {y.shape}")
    if not np.all(np.isfinite(y)):
        raise DataError("observations contain non-finite values")
    if y.size != psi.n_samples:
        raise DataError(
            f"{y.size} observations do not match {psi.n_windows} windows of "
            f"{psi.window_len} samples"
        )
    if psi.n_components != params.n_components:
        raise DataError(
            f"log-variance field has {psi.n_components} components, "
            f"model has {params.n_components}"
        )
    return y


def _symmetrize(cov: np.ndarray) -> np.ndarray:
    return 0.5 * (cov + cov.T)


def kalman_filter(
    observations: np.ndarray,
    params: ModelParams,
    psi: LogVarianceField,
    observed: np.ndarray | None = None,
) -> FilterResult:
    """Forward pass over the stacked oscillator state.

    The first state uses the prior N(0, blkdiag(sigma^2_{j,1} I)) directly;
    every later state is predicted through A with the process noise of the
    window it belongs to. Covariance updates use the Joseph form.

    Samples where the boolean mask ``observed`` is False are treated as
    missing: the filter only predicts through them, and their one-step
    predictive log densities go to ``heldout_loglik`` instead of ``loglik``.

    Raises:
        DataError: On non-finite or mis-sized observations or mask.
        NumericalError: If an innovation variance is not positive.
    """
    y = _check_inputs(observations, params, psi)
    n_samples, dim = y.size, 2 * params.n_components
    transition = transition_matrix(params)
    h = observation_vector(params.n_components)
    noise_var = params.obs_noise_var
    identity = np.eye(dim)
    # M x 2J diagonals of the per-window process noise
    process_diag = np.repeat(psi.powers.T * (1.0 - params.decay**2), 2, axis=1)
    window_of = np.arange(n_samples) // psi.window_len
    if observed is None:
        mask = np.ones(n_samples, dtype=bool)
    else:
        mask = np.asarray(observed, dtype=bool)
        if mask.shape != (n_samples,):
            raise DataError(
                f"observed mask has shape {mask.shape}, expected ({n_samples},)"
            )

    filt_means = np.empty((n_samples, dim))
    filt_covs = np.empty((n_samples, dim, dim))
    pred_means = np.empty((n_samples, dim))
    pred_covs = np.empty((n_samples, dim, dim))
    loglik = heldout = 0.0

    mean = np.zeros(dim)
    cov = np.diag(np.repeat(psi.powers[:, 0], 2))
    for k in range(n_samples):
        if k > 0:
            mean = transition @ filt_means[k - 1]
            cov = _symmetrize(
                transition @ filt_covs[k - 1] @ transition.T
                + np.diag(process_diag[window_of[k]])
            )
        pred_means[k] = mean
        pred_covs[k] = cov

        cov_h = cov @ h
        innovation_var = float(h @ cov_h) + noise_var
        if not (innovation_var > 0.0 and math.isfinite(innovation_var)):
            raise NumericalError(
                f"innovation variance {innovation_var} at sample {k}", stage="kalman"
            )
        innovation = y[k] - float(h @ mean)
        log_density = -0.5 * (
            math.log(2.0 * math.pi * innovation_var) + innovation**2 / innovation_var
        )
        if not mask[k]:
            filt_means[k] = mean
            filt_covs[k] = cov
            heldout += log_density
            continue
        gain = cov_h / innovation_var
        filt_means[k] = mean + gain * innovation
        joseph = identity - np.outer(gain, h)
        filt_covs[k] = _symmetrize(
            joseph @ cov @ joseph.T + noise_var * np.outer(gain, gain)
        )
        loglik += log_density

    if not (math.isfinite(loglik) and math.isfinite(heldout)):
        raise NumericalError("marginal log-likelihood is not finite", stage="kalman")
    return FilterResult(
        filtered_means=filt_means,
        filtered_covs=filt_covs,
        predicted_means=pred_means,
        predicted_covs=pred_covs,
        transition=transition,
        loglik=loglik,
        heldout_loglik=heldout,
    )


def heldout_loglik(
    observations: np.ndarray,
    params: ModelParams,
    psi: LogVarianceField,
    observed: np.ndarray,
) -> float:
    """Sum of log p(y_k | observed samples before k) over the unobserved samples k."""
    return kalman_filter(observations, params, psi, observed=observed).heldout_loglik


def _smoother_gain(fr: FilterResult, k: int) -> np.ndarray:
    """C_k = P_{k|k} A^T P_{k+1|k}^{-1}, via a Cholesky solve."""
    try:
        factor = cho_factor(fr.predicted_covs[k + 1])
    except LinAlgError as exc:
        raise NumericalError(
            f"predicted covariance at sample {k + 1} is not positive definite",
            stage="smoother",
        ) from exc
    return cho_solve(factor, fr.transition @ fr.filtered_covs[k]).T


def _check_psd(covs: np.ndarray, stage: str) -> None:
    eigvals = np.linalg.eigvalsh(covs)
    scale = max(float(np.max(np.abs(eigvals))), 1.0)
    worst = float(np.min(eigvals))
    if worst < -_PSD_TOL * scale:
        raise NumericalError(
            f"covariance has eigenvalue {worst:.3e} below tolerance", stage=stage
        )


def kalman_smooth(
    observations: np.ndarray, params: ModelParams, psi: LogVarianceField
) -> PosteriorTrajectories:
    """RTS smoother over the full record.

    Args:
        observations: The K samples; K must equal the field's M * N.
        params: Fitted oscillator parameters.
        psi: Fitted window log powers.

    Returns:
        Smoothed means (K x 2J), covariances (K x 2J x 2J) and the marginal
        log-likelihood accumulated from the filter innovations.
    """
    fr = kalman_filter(observations, params, psi)
    n_samples = fr.filtered_means.shape[0]
    means = np.empty_like(fr.filtered_means)
    covs = np.empty_like(fr.filtered_covs)
    means[-1] = fr.filtered_means[-1]
    covs[-1] = fr.filtered_covs[-1]
    for k in range(n_samples - 2, -1, -1):
        gain = _smoother_gain(fr, k)
        means[k] = fr.filtered_means[k] + gain @ (means[k + 1] - fr.predicted_means[k + 1])
        covs[k] = _symmetrize(
            fr.filtered_covs[k]
            + gain @ (covs[k + 1] - fr.predicted_covs[k + 1]) @ gain.T
        )
    _check_psd(covs, "smoother")
    logger.debug(f"smoothed {n_samples} samples, loglik={fr.loglik:.6f}")
    return PosteriorTrajectories(means=means, covs=covs, loglik=fr.loglik)


def reconstruct_component(
    post: PosteriorTrajectories, j: int, width: float = DEFAULT_CI_WIDTH
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Posterior mean of Re z_j and its credible band mean +/- width * sd.

    ``j`` is zero-based; the real part of component j is state column 2j.
    """
    if not 0 <= j < post.n_components:
        raise IndexError(f"component {j} out of range for {post.n_components}")
    column = 2 * j
    mean = np.array(post.means[:, column])
    sd = np.sqrt(np.clip(post.covs[:, column, column], 0.0, None))
    return mean, mean - width * sd, mean + width * sd


def _psd_sqrt(cov: np.ndarray, k: int) -> np.ndarray:
    """Factor L with L L^T = cov, tolerating round-off negative eigenvalues."""
    eigvals, eigvecs = np.linalg.eigh(cov)
    scale = max(float(np.max(np.abs(eigvals))), 1e-300)
    if float(np.min(eigvals)) < -_PSD_TOL * scale:
        raise NumericalError(
            f"backward-sampling covariance at sample {k} is not PSD", stage="ffbs"
        )
    return eigvecs * np.sqrt(np.clip(eigvals, 0.0, None))


def ffbs_sample(
    observations: np.ndarray,
    params: ModelParams,
    psi: LogVarianceField,
    n_samples: int,
    seed: int,
    *,
    chunk_size: int = DEFAULT_FFBS_CHUNK,
) -> SampleEnsemble:
    """Draw joint posterior state trajectories by forward-filter backward-sampling.

    Sample ``s`` consumes its own generator spawned from
    ``SeedSequence(seed)``, so each trajectory depends only on ``(seed, s)``
    and not on ``n_samples`` or ``chunk_size``. The filter and the backward
    gains run once; the backward recursion is vectorized over chunks of
    ``chunk_size`` samples.
    """
    if n_samples < 1:
        raise ValueError(f"n_samples must be >= 1, got {n_samples}")
    if seed < 0:
        raise ValueError(f"seed must be >= 0, got {seed}")
    if chunk_size < 1:
        raise ValueError(f"chunk_size must be >= 1, got {chunk_size}")
    fr = kalman_filter(observations, params, psi)
    n_steps, dim = fr.filtered_means.shape

    gains = np.empty((n_steps - 1, dim, dim))
    roots = np.empty((n_steps, dim, dim))
    roots[-1] = _psd_sqrt(fr.filtered_covs[-1], n_steps - 1)
    for k in range(n_steps - 2, -1, -1):
        gains[k] = _smoother_gain(fr, k)
        cond_cov = _symmetrize(
            fr.filtered_covs[k] - gains[k] @ fr.transition @ fr.filtered_covs[k]
        )
        roots[k] = _psd_sqrt(cond_cov, k)

    streams = np.random.SeedSequence(seed).spawn(n_samples)
    samples = np.empty((n_samples, n_steps, dim))
    for start in range(0, n_samples, chunk_size):
        chunk = streams[start : start + chunk_size]
        normals = np.stack(
            [np.random.default_rng(stream).standard_normal((n_steps, dim)) for stream in chunk]
        )
        block = samples[start : start + len(chunk)]
        block[:, -1] = fr.filtered_means[-1] + normals[:, -1] @ roots[-1].T
        for k in range(n_steps - 2, -1, -1):
            cond_mean = fr.filtered_means[k] + (
                block[:, k + 1] - fr.predicted_means[k + 1]
            ) @ gains[k].T
            block[:, k] = cond_mean + normals[:, k] @ roots[k].T

    logger.debug(f"drew {n_samples} trajectories of {n_steps} samples (seed={seed})")
    return SampleEnsemble(samples=samples, seed=seed)


def phase_estimate(
    ens: SampleEnsemble,
    j: int,
    level: float = DEFAULT_PHASE_LEVEL,
    min_samples: int = DEFAULT_PHASE_MIN_SAMPLES,
) -> PhaseEstimate:
    """Circular mean and credible interval of the phase atan2(Im z_j, Re z_j).

    Bounds are empirical quantiles of the wrapped deviations from the circular
    mean, re-centred on the mean. Where the mean resultant length drops below
    0.1 the phase is flagged degenerate and both bounds are set to the
    antipode of the mean, meaning the interval is the full circle.

    Raises:
        ValueError: If the ensemble has fewer than ``min_samples`` draws or
            ``level`` is outside (0, 1).
    """
    if not 0.0 < level < 1.0:
        raise ValueError(f"level must lie in (0, 1), got {level}")
    if ens.n_samples < min_samples:
        raise ValueError(
            f"phase quantiles need at least {min_samples} samples, got {ens.n_samples}"
        )
    n_comp = ens.samples.shape[2] // 2
    if not 0 <= j < n_comp:
        raise IndexError(f"component {j} out of range for {n_comp}")

    phases = np.arctan2(ens.samples[:, :, 2 * j + 1], ens.samples[:, :, 2 * j])
    resultant = np.mean(np.exp(1j * phases), axis=0)
    mean_phase = wrap_phase(np.angle(resultant))
    deviations = wrap_phase(phases - mean_phase[None, :])
    low = np.minimum(np.quantile(deviations, (1.0 - level) / 2.0, axis=0), 0.0)
    high = np.maximum(np.quantile(deviations, (1.0 + level) / 2.0, axis=0), 0.0)
    lower = wrap_phase(mean_phase + low)
    upper = wrap_phase(mean_phase + high)

    degenerate = np.abs(resultant) < DEGENERATE_RESULTANT
    if np.any(degenerate):
        antipode = wrap_phase(mean_phase + math.pi)
        lower = np.where(degenerate, antipode, lower)
        upper = np.where(degenerate, antipode, upper)
        logger.warning(
            f"component {j}: phase is degenerate at {int(degenerate.sum())} samples"
        )
    return PhaseEstimate(
        component=j,
        level=level,
        mean_phase=mean_phase,
        lower=lower,
        upper=upper,
        degenerate=degenerate,
    )
