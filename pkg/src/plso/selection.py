"""Initialization, noise-floor estimation and model selection over J and lambda."""

from __future__ import annotations

import math
from collections.abc import Sequence

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.signal import find_peaks

from plso.apg import DEFAULT_OUTER_ITERS, ApgConfig, apg_fit_psi, block_coordinate_fit
from plso.kalman import heldout_loglik
from plso.logging_utils import get_logger, log_stage
from plso.models import STATIONARY, LogVarianceField, ModelParams
from plso.oscillator import default_max_lengthscale, hz_to_radians, spectral_shapes
from plso.whittle import periodogram, whittle_loglik

logger = get_logger(__name__)

DEFAULT_LAMBDA_GRID: tuple[float | str, ...] = (
    0.0,
    1e-2,
    1e-1,
    1.0,
    10.0,
    100.0,
    STATIONARY,
)
DEFAULT_PROMINENCE = 5.0
DEFAULT_LENGTHSCALE_FRACTION = 1.0
# Peaks closer than this many DFT bins to a stronger peak are ignored
DEFAULT_MIN_PEAK_DISTANCE = 3
AIC_PARAMS_PER_COMPONENT = 3
# l_init is floored at this many sampling intervals
_MIN_LENGTHSCALE_SAMPLES = 10
# Relative power floor for components seeded where the data show no excess power
_SEED_POWER_FLOOR = 1e-3


class SelectionConfig(BaseModel):
    """Settings shared by the initialization, AIC and cross-validation steps."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    delta: float = Field(..., gt=0, description="Sampling interval in seconds")
    cutoff_hz: float = Field(..., gt=0, description="Noise-floor cutoff frequency")
    prominence: float = Field(DEFAULT_PROMINENCE, gt=0)
    lengthscale_fraction: float = Field(DEFAULT_LENGTHSCALE_FRACTION, gt=0)
    outer_iters: int = Field(DEFAULT_OUTER_ITERS, ge=0)
    optimizer: ApgConfig = Field(default_factory=ApgConfig)
    refit_theta: bool = True
    frozen: tuple[bool, ...] | None = None


def lambda_key(smoothness: float | str) -> str:
    """Stable string key for a smoothness value ("stationary" or repr of the float)."""
    return STATIONARY if smoothness == STATIONARY else repr(float(smoothness))


def _lambda_sort_value(smoothness: float | str) -> float:
    return math.inf if smoothness == STATIONARY else float(smoothness)


class SelectionReport(BaseModel):
    """Outcome of noise estimation, J selection and lambda cross-validation."""

    model_config = ConfigDict(extra="forbid")

    aic_by_j: dict[int, float] = Field(default_factory=dict)
    chosen_j: int | None = None
    cv_by_lambda: dict[str, float] = Field(default_factory=dict)
    chosen_lambda: float | str | None = None
    sigma_nu2: float | None = None
    init_params: ModelParams | None = None
    init_psi: LogVarianceField | None = None

    @field_validator("chosen_lambda", mode="before")
    @classmethod
    def _coerce_lambda(cls, v: float | str | None) -> float | str | None:
        if v is None or v == STATIONARY:
            return v
        return float(v)


def estimate_obs_noise(observations: np.ndarray, delta: float, cutoff_hz: float) -> float:
    """Observation-noise variance from the high-frequency floor of the spectrum.

    Averages the periodogram of the whole record (normalized by its length)
    over the band [cutoff_hz, f_s / 2].

    Raises:
        ValueError: If the band is empty, i.e. ``cutoff_hz`` is at or above
            the Nyquist frequency.
    """
    y = np.asarray(observations, dtype=np.float64)
    nyquist = 0.5 / delta
    if not 0.0 <= cutoff_hz < nyquist:
        raise ValueError(
            f"cutoff {cutoff_hz} Hz leaves an empty band below the Nyquist "
            f"frequency {nyquist} Hz"
        )
    power = np.abs(np.fft.rfft(y)) ** 2 / y.size
    freqs = np.fft.rfftfreq(y.size, d=delta)
    band = freqs >= cutoff_hz
    if not np.any(band):
        raise ValueError(f"no frequency bins at or above {cutoff_hz} Hz")
    estimate = float(np.mean(power[band]))
    logger.debug(f"noise floor above {cutoff_hz} Hz: {estimate:.6g}")
    return estimate


def _initial_frequencies(
    mean_power: np.ndarray,
    freqs: np.ndarray,
    n_components: int,
    cutoff: float,
    prominence: float,
    min_distance: int,
) -> np.ndarray:
    threshold = prominence * float(np.median(mean_power))
    peaks, _ = find_peaks(mean_power, height=threshold, distance=min_distance)
    peaks = peaks[freqs[peaks] <= cutoff]
    strongest = peaks[np.argsort(-mean_power[peaks], kind="stable")][:n_components]
    chosen = freqs[strongest]
    remaining = n_components - chosen.size
    # Unclaimed components sit at the midpoints of equal sub-bands of [0, cutoff].
    fill = cutoff * (np.arange(remaining) + 0.5) / max(remaining, 1)
    return np.sort(np.concatenate([chosen, fill]))


def initialize(
    observations: np.ndarray,
    window_len: int,
    n_components: int,
    cutoff_hz: float,
    prominence: float = DEFAULT_PROMINENCE,
    *,
    delta: float,
    obs_noise_var: float | None = None,
    cfg: ApgConfig | None = None,
    lengthscale_fraction: float = DEFAULT_LENGTHSCALE_FRACTION,
    min_peak_distance: int = DEFAULT_MIN_PEAK_DISTANCE,
) -> tuple[ModelParams, LogVarianceField]:
    """Seed oscillator frequencies from spectral peaks and fit starting log powers.

    Centre frequencies go to the strongest peaks of the window-averaged
    periodogram that exceed ``prominence`` times its median and lie below
    the cutoff, at least ``min_peak_distance`` bins apart; components without
    a peak are spread over [0, cutoff].
    Lengthscales start at ``lengthscale_fraction`` periods, floored at ten
    samples. Log powers come from a lambda = 0 proximal-gradient fit.

    Returns:
        ``(params, psi)`` with ``params.smoothness == 0``.
    """
    if n_components < 1:
        raise ValueError(f"n_components must be >= 1, got {n_components}")
    cfg = cfg or ApgConfig()
    pg = periodogram(observations, window_len)
    if obs_noise_var is None:
        obs_noise_var = estimate_obs_noise(observations, delta, cutoff_hz)

    half = window_len // 2 + 1
    freqs = 2.0 * math.pi * np.arange(half) / window_len
    mean_power = pg.values.mean(axis=0)[:half]
    cutoff = min(float(hz_to_radians(cutoff_hz, delta)), math.pi)
    omegas = _initial_frequencies(
        mean_power, freqs, n_components, cutoff, prominence, max(min_peak_distance, 1)
    )

    l_max = cfg.max_lengthscale or default_max_lengthscale(delta, window_len)
    with np.errstate(divide="ignore"):
        periods = np.where(omegas > 0, 2.0 * math.pi * delta / omegas, np.inf)
    lengthscales = np.clip(
        lengthscale_fraction * periods,
        min(_MIN_LENGTHSCALE_SAMPLES * delta, l_max),
        l_max,
    )
    params = ModelParams(
        delta=delta,
        smoothness=0.0,
        obs_noise_var=obs_noise_var,
        lengthscales=lengthscales,
        center_freqs=omegas,
        max_lengthscale=l_max,
    )

    shapes = spectral_shapes(params, window_len)
    bins = np.clip(np.rint(omegas * window_len / (2.0 * math.pi)).astype(int), 0, window_len - 1)
    excess = pg.values[:, bins].T - obs_noise_var
    seed_power = np.maximum(excess, _SEED_POWER_FLOOR * obs_noise_var)
    seed = np.log(seed_power / shapes[np.arange(n_components), bins][:, None])
    seed = np.clip(seed, -cfg.log_power_bound, cfg.log_power_bound)
    psi0 = LogVarianceField(
        values=seed, window_len=window_len, log_power_bound=cfg.log_power_bound
    )
    psi, trace = apg_fit_psi(pg, params, psi0, cfg)
    logger.info(
        f"initialized {n_components} components at "
        f"{np.round(omegas / (2 * math.pi * delta), 3).tolist()} Hz "
        f"({trace.iterations} APG iterations)"
    )
    return params, psi


def aic_from_loglik(loglik: float, n_windows: int, n_components: int) -> float:
    """-(2/M) loglik + 2 * 3 * J."""
    return -(2.0 / n_windows) * loglik + 2.0 * AIC_PARAMS_PER_COMPONENT * n_components


def aic(
    observations: np.ndarray,
    window_len: int,
    n_components: int,
    cfg: SelectionConfig,
    obs_noise_var: float | None = None,
) -> float:
    """AIC of a lambda = 0 fit with ``n_components`` oscillators."""
    if obs_noise_var is None:
        obs_noise_var = estimate_obs_noise(observations, cfg.delta, cfg.cutoff_hz)
    init = initialize(
        observations,
        window_len,
        n_components,
        cfg.cutoff_hz,
        cfg.prominence,
        delta=cfg.delta,
        obs_noise_var=obs_noise_var,
        cfg=cfg.optimizer,
        lengthscale_fraction=cfg.lengthscale_fraction,
    )
    params, psi, _ = block_coordinate_fit(
        observations,
        window_len,
        n_components,
        0.0,
        cfg.optimizer,
        cfg.outer_iters,
        delta=cfg.delta,
        obs_noise_var=obs_noise_var,
        init=init,
        frozen=_frozen_for(cfg, n_components),
        fit_theta=cfg.refit_theta,
    )
    pg = periodogram(observations, window_len)
    return aic_from_loglik(whittle_loglik(pg, params, psi), pg.n_windows, n_components)


def _frozen_for(cfg: SelectionConfig, n_components: int) -> tuple[bool, ...] | None:
    if cfg.frozen is None:
        return None
    if len(cfg.frozen) != n_components:
        raise ValueError(
            f"{len(cfg.frozen)} freeze flags given for {n_components} components"
        )
    return cfg.frozen


def select_j(
    observations: np.ndarray,
    window_len: int,
    j_candidates: Sequence[int],
    cfg: SelectionConfig,
    obs_noise_var: float | None = None,
) -> SelectionReport:
    """Pick the number of components minimizing AIC (ties go to the smaller J)."""
    candidates = sorted(set(int(j) for j in j_candidates))
    if not candidates:
        raise ValueError("j_candidates must not be empty")
    if obs_noise_var is None:
        obs_noise_var = estimate_obs_noise(observations, cfg.delta, cfg.cutoff_hz)

    scores: dict[int, float] = {}
    for n_components in candidates:
        with log_stage(logger, f"AIC for J={n_components}"):
            scores[n_components] = aic(
                observations, window_len, n_components, cfg, obs_noise_var
            )
    chosen = candidates[0]
    for n_components in candidates[1:]:
        if scores[n_components] < scores[chosen]:
            chosen = n_components
    logger.info(f"AIC selects J={chosen}: {scores}")
    return SelectionReport(aic_by_j=scores, chosen_j=chosen, sigma_nu2=obs_noise_var)


def _fold_start(
    params: ModelParams, psi: LogVarianceField, fold_window: int
) -> tuple[ModelParams, LogVarianceField]:
    """Map a full-rate starting point onto a half-rate fold.

    Frequencies in radians per sample double at half the sampling rate and
    are clipped at pi.
    """
    doubled = 2.0 * np.asarray(params.center_freqs)
    if np.any(doubled > math.pi):
        logger.warning(
            f"cross-validation folds alias {int(np.sum(doubled > math.pi))} "
            "component(s) above the half-rate Nyquist frequency; clipping at pi"
        )
    fold_params = params.replace(
        delta=2.0 * params.delta, center_freqs=np.minimum(doubled, math.pi)
    )
    fold_psi = LogVarianceField(
        values=psi.values, window_len=fold_window, log_power_bound=psi.log_power_bound
    )
    return fold_params, fold_psi


def _full_rate(
    params: ModelParams, psi: LogVarianceField, window_len: int
) -> tuple[ModelParams, LogVarianceField]:
    """Map a half-rate fold fit back onto the full record; inverse of ``_fold_start``."""
    full_params = params.replace(
        delta=0.5 * params.delta, center_freqs=0.5 * np.asarray(params.center_freqs)
    )
    full_psi = LogVarianceField(
        values=psi.values, window_len=window_len, log_power_bound=psi.log_power_bound
    )
    return full_params, full_psi


def cross_validate_lambda(
    observations: np.ndarray,
    window_len: int,
    n_components: int,
    lambda_grid: Sequence[float | str],
    cfg: SelectionConfig,
    obs_noise_var: float | None = None,
    init: tuple[ModelParams, LogVarianceField] | None = None,
) -> SelectionReport:
    """Even/odd two-fold cross-validation of the smoothness weight.

    Each fold is the record at twice the sampling interval with windows of
    N/2 samples. A fit on one fold is mapped back to the full sampling rate
    and scored in the time domain: the Kalman filter runs over the whole
    record with the other fold's samples missing, and the score is the sum
    of their one-step predictive log densities. The two directions are
    averaged. The largest score wins, ties going to the larger lambda.

    Raises:
        ValueError: If the grid is empty or ``window_len`` is odd.
    """
    grid = list(lambda_grid)
    if not grid:
        raise ValueError("lambda_grid must not be empty")
    if window_len % 2:
        raise ValueError(f"window_len must be even for even/odd folds, got {window_len}")
    y = np.asarray(observations, dtype=np.float64)
    periodogram(y, window_len)
    if obs_noise_var is None:
        obs_noise_var = estimate_obs_noise(y, cfg.delta, cfg.cutoff_hz)
    if init is None:
        init = initialize(
            y,
            window_len,
            n_components,
            cfg.cutoff_hz,
            cfg.prominence,
            delta=cfg.delta,
            obs_noise_var=obs_noise_var,
            cfg=cfg.optimizer,
            lengthscale_fraction=cfg.lengthscale_fraction,
        )
    fold_window = window_len // 2
    fold_params, fold_psi = _fold_start(init[0], init[1], fold_window)
    even = np.arange(y.size) % 2 == 0
    # (training samples, mask of the samples the filter may condition on)
    folds = ((y[0::2], even), (y[1::2], ~even))

    scores: dict[str, float] = {}
    for smoothness in grid:
        fold_scores = []
        for train, observed in folds:
            params, psi, _ = block_coordinate_fit(
                train,
                fold_window,
                n_components,
                smoothness,
                cfg.optimizer,
                cfg.outer_iters,
                delta=fold_params.delta,
                obs_noise_var=obs_noise_var,
                init=(fold_params, fold_psi),
                frozen=_frozen_for(cfg, n_components),
                fit_theta=cfg.refit_theta,
            )
            full_params, full_psi = _full_rate(params, psi, window_len)
            fold_scores.append(heldout_loglik(y, full_params, full_psi, observed))
        scores[lambda_key(smoothness)] = 0.5 * (fold_scores[0] + fold_scores[1])
        logger.info(f"CV lambda={smoothness}: score={scores[lambda_key(smoothness)]:.6f}")

    ranked = sorted(grid, key=_lambda_sort_value, reverse=True)
    chosen = ranked[0]
    for smoothness in ranked[1:]:
        if scores[lambda_key(smoothness)] > scores[lambda_key(chosen)]:
            chosen = smoothness
    logger.info(f"CV selects lambda={chosen}")
    return SelectionReport(
        cv_by_lambda=scores,
        chosen_lambda=chosen,
        sigma_nu2=obs_noise_var,
        init_params=init[0],
        init_psi=init[1],
    )


def select_model(
    observations: np.ndarray,
    window_len: int,
    cfg: SelectionConfig,
    *,
    n_components: int | None = None,
    j_candidates: Sequence[int] | None = None,
    smoothness: float | str = "cv",
    lambda_grid: Sequence[float | str] = DEFAULT_LAMBDA_GRID,
) -> SelectionReport:
    """Run noise estimation, optional AIC over J and optional lambda CV.

    Exactly one of ``n_components`` and ``j_candidates`` must be given.
    ``smoothness`` is a fixed lambda, ``"stationary"`` or ``"cv"``.
    """
    if (n_components is None) == (j_candidates is None):
        raise ValueError("give exactly one of n_components and j_candidates")
    sigma_nu2 = estimate_obs_noise(observations, cfg.delta, cfg.cutoff_hz)
    report = SelectionReport(sigma_nu2=sigma_nu2)
    if j_candidates is not None:
        report = select_j(observations, window_len, j_candidates, cfg, sigma_nu2)
        n_components = report.chosen_j
    assert n_components is not None

    init = initialize(
        observations,
        window_len,
        n_components,
        cfg.cutoff_hz,
        cfg.prominence,
        delta=cfg.delta,
        obs_noise_var=sigma_nu2,
        cfg=cfg.optimizer,
        lengthscale_fraction=cfg.lengthscale_fraction,
    )
    chosen_lambda: float | str = smoothness
    cv_by_lambda: dict[str, float] = {}
    if smoothness == "cv":
        cv = cross_validate_lambda(
            observations, window_len, n_components, lambda_grid, cfg, sigma_nu2, init
        )
        assert cv.chosen_lambda is not None
        chosen_lambda, cv_by_lambda = cv.chosen_lambda, cv.cv_by_lambda
    return report.model_copy(
        update={
            "chosen_j": n_components,
            "cv_by_lambda": cv_by_lambda,
            "chosen_lambda": chosen_lambda,
            "sigma_nu2": sigma_nu2,
            "init_params": init[0],
            "init_psi": init[1],
        }
    )
