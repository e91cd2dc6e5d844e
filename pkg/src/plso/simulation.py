"""Amplitude-modulated two-oscillator experiment, evaluation metrics and benchmark runner."""

from __future__ import annotations

import math
import time
from collections.abc import Sequence
from typing import Any

import numpy as np
import pandas as pd
from fox_progress_bar import ProgressBar
from pydantic import BaseModel, ConfigDict, Field, field_serializer, field_validator, model_validator
from scipy.optimize import linear_sum_assignment

from plso.apg import block_coordinate_fit
from plso.errors import NumericalError
from plso.kalman import kalman_smooth
from plso.logging_utils import _enable_logging, get_logger, log_stage
from plso.models import STATIONARY, LogVarianceField, ModelParams
from plso.oscillator import hz_to_radians, simulate_generative, spectral_shapes
from plso.selection import (
    DEFAULT_LAMBDA_GRID,
    SelectionConfig,
    cross_validate_lambda,
    estimate_obs_noise,
    initialize,
    lambda_key,
)
from plso.whittle import model_psd

logger = get_logger(__name__)

CV_MODE = "cv"
TRUTH_MODE = "truth"
DEFAULT_LAMBDA_MODES: tuple[float | str, ...] = (0.0, CV_MODE, STATIONARY)
DEFAULT_BENCH_CUTOFF_HZ = 50.0


def _readonly(value: Any, ndim: int, name: str) -> np.ndarray:
    arr = np.array(value, dtype=np.float64)
    if arr.ndim != ndim:
        raise ValueError(f"{name} must be {ndim}-D, got shape {arr.shape}")
    arr.flags.writeable = False
    return arr


class ExperimentSpec(BaseModel):
    """Constants of the amplitude-modulated two-oscillator experiment."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    modulation_hz: float = Field(0.04, gt=0, description="Envelope frequency w0 in Hz")
    center_freqs_hz: tuple[float, float] = (1.0, 10.0)
    sampling_rate: float = Field(200.0, gt=0)
    duration_s: float = Field(100.0, gt=0)
    lengthscale_s: float = Field(1.0, gt=0)
    noise_var: float = Field(25.0, gt=0)
    amplitude: float = Field(10.0, gt=0)
    window_seconds: float = Field(2.0, gt=0)

    @model_validator(mode="after")
    def _check_grid(self) -> ExperimentSpec:
        if self.n_samples % self.window_len:
            raise ValueError(
                f"{self.n_samples} samples do not split into windows of {self.window_len}"
            )
        if max(self.center_freqs_hz) >= self.sampling_rate / 2:
            raise ValueError("center frequencies must lie below the Nyquist frequency")
        return self

    @property
    def delta(self) -> float:
        return 1.0 / self.sampling_rate

    @property
    def n_samples(self) -> int:
        return int(round(self.duration_s * self.sampling_rate))

    @property
    def window_len(self) -> int:
        return int(round(self.window_seconds * self.sampling_rate))

    @property
    def n_windows(self) -> int:
        return self.n_samples // self.window_len

    def true_params(self) -> ModelParams:
        """Stationary unit-power oscillators that generate the latent states."""
        return ModelParams(
            delta=self.delta,
            smoothness=STATIONARY,
            obs_noise_var=self.noise_var,
            lengthscales=(self.lengthscale_s, self.lengthscale_s),
            center_freqs=tuple(hz_to_radians(f, self.delta) for f in self.center_freqs_hz),
        )

    def envelopes(self) -> np.ndarray:
        """2 x K amplitude envelopes A (K - k) / K and A cos^4(2 pi w0 k delta), k = 1..K."""
        k = np.arange(1, self.n_samples + 1)
        linear = self.amplitude * (self.n_samples - k) / self.n_samples
        periodic = self.amplitude * np.cos(2.0 * math.pi * self.modulation_hz * k * self.delta) ** 4
        return np.vstack([linear, periodic])


class SimulationBundle(BaseModel):
    """One realization of the experiment with its ground truth."""

    model_config = ConfigDict(frozen=True, extra="forbid", arbitrary_types_allowed=True)

    observations: np.ndarray
    true_components: np.ndarray
    true_window_vars: np.ndarray
    spec: ExperimentSpec
    seed: int

    @field_validator("observations", mode="before")
    @classmethod
    def _coerce_observations(cls, v: Any) -> np.ndarray:
        return _readonly(v, 1, "observations")

    @field_validator("true_components", "true_window_vars", mode="before")
    @classmethod
    def _coerce_matrices(cls, v: Any) -> np.ndarray:
        return _readonly(v, 2, "ground truth")

    @model_validator(mode="after")
    def _check_lengths(self) -> SimulationBundle:
        if self.observations.shape[0] != self.spec.n_samples:
            raise ValueError("observations length does not match the experiment")
        if self.true_components.shape != (self.spec.n_samples, 2):
            raise ValueError("true_components must be K x 2")
        if self.true_window_vars.shape != (2, self.spec.n_windows):
            raise ValueError("true_window_vars must be 2 x M")
        return self

    def true_spectrogram(self) -> np.ndarray:
        """M x N true PSD from the envelope powers at the window centres."""
        shapes = spectral_shapes(self.spec.true_params(), self.spec.window_len)
        return self.spec.noise_var + self.true_window_vars.T @ shapes


def simulate_experiment(
    seed: int, spec: ExperimentSpec | None = None
) -> SimulationBundle:
    """Simulate two amplitude-modulated oscillations in white noise.

    Latent states come from the stationary unit-power model; the first
    component is scaled by a decaying linear envelope and the second by a
    cos^4 envelope. Latent draws and observation noise use separate streams
    derived from ``seed``.
    """
    spec = spec or ExperimentSpec()
    params = spec.true_params()
    unit = LogVarianceField(
        values=np.zeros((2, spec.n_windows)), window_len=spec.window_len
    )
    _, latent = simulate_generative(params, unit, np.random.SeedSequence((seed, 0)))
    envelopes = spec.envelopes()
    true_components = latent.real_parts * envelopes.T

    noise_rng = np.random.default_rng(np.random.SeedSequence((seed, 1)))
    noise = math.sqrt(spec.noise_var) * noise_rng.standard_normal(spec.n_samples)
    observations = true_components.sum(axis=1) + noise

    centres = np.arange(spec.n_windows) * spec.window_len + spec.window_len // 2
    true_window_vars = envelopes[:, centres] ** 2
    logger.debug(f"simulated experiment seed={seed}: {spec.n_samples} samples")
    return SimulationBundle(
        observations=observations,
        true_components=true_components,
        true_window_vars=true_window_vars,
        spec=spec,
        seed=seed,
    )


def jump_metric(traj: np.ndarray, window_len: int) -> float:
    """Mean absolute change of a trajectory across the M - 1 window boundaries."""
    traj = np.asarray(traj, dtype=np.float64)
    if window_len < 1 or traj.size % window_len:
        raise ValueError(f"{traj.size} samples do not split into windows of {window_len}")
    n_windows = traj.size // window_len
    if n_windows < 2:
        raise ValueError("the jump metric needs at least two windows")
    boundaries = np.arange(1, n_windows) * window_len
    return float(np.mean(np.abs(traj[boundaries] - traj[boundaries - 1])))


def mse_metric(estimate: np.ndarray, truth: np.ndarray) -> float:
    estimate = np.asarray(estimate, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if estimate.shape != truth.shape:
        raise ValueError(f"estimate {estimate.shape} and truth {truth.shape} differ in length")
    return float(np.mean((estimate - truth) ** 2))


def is_divergence(true_spec: np.ndarray, est_spec: np.ndarray) -> float:
    """Itakura-Saito divergence averaged over all cells.

    Raises:
        ValueError: On shape mismatch or nonpositive entries.
    """
    true_spec = np.asarray(true_spec, dtype=np.float64)
    est_spec = np.asarray(est_spec, dtype=np.float64)
    if true_spec.shape != est_spec.shape:
        raise ValueError(f"spectra differ in shape: {true_spec.shape} vs {est_spec.shape}")
    if np.any(true_spec <= 0) or np.any(est_spec <= 0):
        raise ValueError("spectra must be strictly positive")
    ratio = true_spec / est_spec
    return float(np.mean(ratio - np.log(ratio) - 1.0))


def match_components(est_freqs: Sequence[float], true_freqs: Sequence[float]) -> np.ndarray:
    """Index of the estimated component assigned to each true component.

    Minimizes the total absolute frequency mismatch.
    """
    est = np.asarray(est_freqs, dtype=np.float64)
    true = np.asarray(true_freqs, dtype=np.float64)
    if est.size < true.size:
        raise ValueError(f"{est.size} estimated components cannot cover {true.size} true ones")
    cost = np.abs(true[:, None] - est[None, :])
    rows, cols = linear_sum_assignment(cost)
    assignment = np.empty(true.size, dtype=int)
    assignment[rows] = cols
    return assignment


def independent_window_smooth(
    observations: np.ndarray, params: ModelParams, psi: LogVarianceField
) -> np.ndarray:
    """K x 2J smoothed means with every window smoothed on its own.

    Each window starts from the prior instead of the previous window's
    posterior, which produces jumps at the boundaries.
    """
    y = np.asarray(observations, dtype=np.float64)
    n = psi.window_len
    means = []
    for m in range(psi.n_windows):
        window_psi = LogVarianceField(
            values=psi.values[:, m : m + 1],
            window_len=n,
            log_power_bound=psi.log_power_bound,
        )
        means.append(kalman_smooth(y[m * n : (m + 1) * n], params, window_psi).means)
    return np.concatenate(means, axis=0)


class MetricsReport(BaseModel):
    """Per-component MSE and jump, the spectral IS divergence and optional runtime."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    mse: tuple[float, ...]
    jump: tuple[float, ...]
    is_div: float = Field(..., ge=0)
    runtime_seconds: float | None = Field(None, ge=0)

    @field_validator("mse", "jump")
    @classmethod
    def _check_nonnegative(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(x < 0 for x in v):
            raise ValueError("metrics must be nonnegative")
        return v

    def as_rows(self) -> list[tuple[str, float]]:
        rows = [(f"mse_z{i + 1}", v) for i, v in enumerate(self.mse)]
        rows += [(f"jump_z{i + 1}", v) for i, v in enumerate(self.jump)]
        rows.append(("is_div", self.is_div))
        if self.runtime_seconds is not None:
            rows.append(("runtime_seconds", self.runtime_seconds))
        return rows


def mode_label(mode: float | str) -> str:
    return CV_MODE if mode == CV_MODE else lambda_key(mode)


class BenchmarkResult(BaseModel):
    """Metrics per seed and mode, plus the seeds whose runs failed."""

    model_config = ConfigDict(extra="forbid")

    rows: dict[int, dict[str, MetricsReport]] = Field(default_factory=dict)
    failures: dict[int, str] = Field(default_factory=dict)
    chosen_lambdas: dict[int, str] = Field(default_factory=dict)

    def to_frame(self) -> pd.DataFrame:
        """One row per (seed, mode, metric)."""
        records = [
            {"seed": seed, "mode": mode, "metric": metric, "value": value}
            for seed, by_mode in sorted(self.rows.items())
            for mode, report in by_mode.items()
            for metric, value in report.as_rows()
        ]
        return pd.DataFrame.from_records(
            records, columns=["seed", "mode", "metric", "value"]
        )

    def summary(self) -> pd.DataFrame:
        """Seed-averaged metrics, one row per (mode, metric)."""
        frame = self.to_frame()
        if frame.empty:
            return pd.DataFrame(columns=["mode", "metric", "value"])
        return (
            frame.groupby(["mode", "metric"], sort=False, as_index=False)["value"]
            .mean()
            .reset_index(drop=True)
        )

    @field_serializer("rows")
    def _serialize_rows(
        self, rows: dict[int, dict[str, MetricsReport]]
    ) -> dict[str, dict[str, Any]]:
        return {
            str(seed): {mode: report.model_dump() for mode, report in by_mode.items()}
            for seed, by_mode in rows.items()
        }


def _truth_report(bundle: SimulationBundle) -> MetricsReport:
    n = bundle.spec.window_len
    return MetricsReport(
        mse=(0.0, 0.0),
        jump=tuple(jump_metric(bundle.true_components[:, t], n) for t in range(2)),
        is_div=0.0,
    )


def _score_fit(
    bundle: SimulationBundle,
    params: ModelParams,
    psi: LogVarianceField,
    runtime: float | None,
) -> MetricsReport:
    spec = bundle.spec
    post = kalman_smooth(bundle.observations, params, psi)
    true_freqs = spec.true_params().center_freqs
    assignment = match_components(params.center_freqs, true_freqs)
    estimates = [post.means[:, 2 * j] for j in assignment]
    return MetricsReport(
        mse=tuple(
            mse_metric(est, bundle.true_components[:, t]) for t, est in enumerate(estimates)
        ),
        jump=tuple(jump_metric(est, spec.window_len) for est in estimates),
        is_div=is_divergence(bundle.true_spectrogram(), model_psd(params, psi)),
        runtime_seconds=runtime,
    )


def _run_seed(
    seed: int,
    lambda_modes: Sequence[float | str],
    cfg: SelectionConfig,
    spec: ExperimentSpec,
    lambda_grid: Sequence[float | str],
    record_runtime: bool,
) -> tuple[dict[str, MetricsReport], str | None]:
    bundle = simulate_experiment(seed, spec)
    y, n = bundle.observations, spec.window_len
    reports = {TRUTH_MODE: _truth_report(bundle)}
    chosen: str | None = None

    start = time.perf_counter()
    sigma_nu2 = estimate_obs_noise(y, cfg.delta, cfg.cutoff_hz)
    init = initialize(
        y,
        n,
        2,
        cfg.cutoff_hz,
        cfg.prominence,
        delta=cfg.delta,
        obs_noise_var=sigma_nu2,
        cfg=cfg.optimizer,
        lengthscale_fraction=cfg.lengthscale_fraction,
    )
    setup_time = time.perf_counter() - start

    for mode in lambda_modes:
        start = time.perf_counter()
        smoothness = mode
        if mode == CV_MODE:
            cv = cross_validate_lambda(y, n, 2, lambda_grid, cfg, sigma_nu2, init)
            assert cv.chosen_lambda is not None
            smoothness = cv.chosen_lambda
            chosen = lambda_key(smoothness)
        params, psi, _ = block_coordinate_fit(
            y,
            n,
            2,
            smoothness,
            cfg.optimizer,
            cfg.outer_iters,
            delta=cfg.delta,
            obs_noise_var=sigma_nu2,
            init=init,
            frozen=cfg.frozen,
            fit_theta=cfg.refit_theta,
        )
        runtime = setup_time + time.perf_counter() - start if record_runtime else None
        reports[mode_label(mode)] = _score_fit(bundle, params, psi, runtime)
    return reports, chosen


def run_benchmark(
    seeds: Sequence[int],
    lambda_modes: Sequence[float | str] = DEFAULT_LAMBDA_MODES,
    cfg: SelectionConfig | None = None,
    spec: ExperimentSpec | None = None,
    *,
    lambda_grid: Sequence[float | str] = DEFAULT_LAMBDA_GRID,
    show_progress: bool = True,
    record_runtime: bool = False,
    enable_logging: bool = False,
) -> BenchmarkResult:
    """Simulate, fit and score one realization per seed for every smoothness mode.

    Args:
        seeds: One realization is drawn per seed.
        lambda_modes: Fixed lambda values, ``"stationary"`` or ``"cv"``.
        cfg: Selection and optimizer settings; ``cfg.delta`` must match the
            experiment's sampling interval.
        spec: Experiment constants.
        lambda_grid: Grid searched by the ``"cv"`` mode.
        show_progress: Show a progress bar over seeds.
        record_runtime: Record wall-clock time per fit. Off by default so
            that results are reproducible bit for bit.
        enable_logging: Enable console and file logging.

    Returns:
        Per-seed metrics (the ground truth is scored as its own mode) and
        the failure message of every seed that raised.
    """
    _enable_logging(enable_logging)
    spec = spec or ExperimentSpec()
    cfg = cfg or SelectionConfig(delta=spec.delta, cutoff_hz=DEFAULT_BENCH_CUTOFF_HZ)
    if not math.isclose(cfg.delta, spec.delta):
        raise ValueError(
            f"selection delta {cfg.delta} does not match the experiment's {spec.delta}"
        )
    if not seeds:
        raise ValueError("seeds must not be empty")

    result = BenchmarkResult()
    progress_bar = ProgressBar(len(seeds)) if show_progress else None
    with log_stage(logger, f"benchmark over {len(seeds)} seeds"):
        for seed in seeds:
            try:
                reports, chosen = _run_seed(
                    seed, lambda_modes, cfg, spec, lambda_grid, record_runtime
                )
            except (NumericalError, ValueError, np.linalg.LinAlgError, FloatingPointError) as e:
                logger.warning(f"seed {seed} failed: {type(e).__name__}: {e}")
                result.failures[seed] = f"{type(e).__name__}: {e}"
            else:
                result.rows[seed] = reports
                if chosen is not None:
                    result.chosen_lambdas[seed] = chosen
            if progress_bar:
                progress_bar.update(1)
    if progress_bar:
        progress_bar.finish()
    return result
