"""Stage-1 inference: penalized Whittle fit of the window log powers.

The log powers are fitted by an inexact accelerated proximal gradient method
whose proximal step is a per-component scalar Kalman smoother; oscillator
lengthscales and centre frequencies are refined in between by nonlinear
conjugate gradient.
"""

from __future__ import annotations

import math
from collections.abc import Sequence
from typing import Any, Literal

import numpy as np
from pydantic import BaseModel, ConfigDict, Field, field_validator
from scipy.optimize import minimize

from plso.errors import DataError
from plso.logging_utils import _enable_logging, get_logger, log_stage
from plso.models import (
    DEFAULT_LOG_POWER_BOUND,
    STATIONARY,
    LogVarianceField,
    ModelParams,
    Periodogram,
)
from plso.oscillator import default_max_lengthscale, spectral_shapes
from plso.whittle import (
    _loglik_grad,
    _prior_value,
    _psd_matrix,
    _window_terms,
    lipschitz_bound,
    periodogram,
    whittle_loglik,
)

logger = get_logger(__name__)

DEFAULT_OUTER_ITERS = 5
# Lengthscales below this multiple of delta make rho underflow to zero.
_MIN_LENGTHSCALE_RATIO = 1e-2
_LOG_BOUNDARY_SLACK = 1e-12


class ApgConfig(BaseModel):
    """Tuning knobs for the proximal gradient fit and the theta refinement."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    max_iters: int = Field(500, ge=1, description="Iteration cap")
    sufficient_decrease: float = Field(
        1e-4, gt=0, description="delta in h(new) <= h(anchor) - delta ||new - anchor||^2"
    )
    shrink: float = Field(0.5, gt=0, lt=1, description="Backtracking step multiplier")
    max_backtracks: int = Field(50, ge=1)
    tol: float = Field(1e-8, gt=0, description="Relative tolerance on |delta h|")
    log_power_bound: float = Field(DEFAULT_LOG_POWER_BOUND, gt=0)
    max_lengthscale: float | None = Field(None, gt=0)
    theta_max_iters: int = Field(50, ge=1)
    finite_diff_rel_step: float = Field(1e-6, gt=0)


class ApgState(BaseModel):
    """Iterates carried from one APG iteration to the next."""

    model_config = ConfigDict(arbitrary_types_allowed=True)

    psi: np.ndarray
    psi_prev: np.ndarray
    u: np.ndarray
    x: np.ndarray
    w: np.ndarray
    beta_prev: float = 0.0
    beta: float = 1.0
    step_w: float = 0.0
    step_psi: float = 0.0
    iteration: int = 0

    def extrapolate(self) -> np.ndarray:
        """Momentum point w built from Psi, its predecessor and u."""
        return (
            self.psi
            + (self.beta_prev / self.beta) * (self.u - self.psi)
            + ((self.beta_prev - 1.0) / self.beta) * (self.psi - self.psi_prev)
        )

    def advance_momentum(self) -> None:
        self.beta_prev, self.beta = (
            self.beta,
            (1.0 + math.sqrt(4.0 * self.beta**2 + 1.0)) / 2.0,
        )


class ApgStep(BaseModel):
    """Bookkeeping for one accepted APG iteration."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    iteration: int
    candidate: Literal["u", "x"]
    objective: float
    anchor_objective: float
    step_norm_sq: float
    step_w: float
    step_psi: float
    backtracks_w: int
    backtracks_psi: int


class ApgTrace(BaseModel):
    """Objective history of an APG run; ``objective[0]`` is h at the start."""

    model_config = ConfigDict(extra="forbid")

    objective: list[float] = Field(default_factory=list)
    steps: list[ApgStep] = Field(default_factory=list)
    converged: bool = False
    backtrack_exhausted: bool = False

    @property
    def iterations(self) -> int:
        return len(self.steps)


class FitDiagnostics(BaseModel):
    """Outer-loop history of :func:`block_coordinate_fit`."""

    model_config = ConfigDict(extra="forbid")

    objective: list[float] = Field(default_factory=list)
    apg_iterations: list[int] = Field(default_factory=list)
    warnings: list[str] = Field(default_factory=list)

    @field_validator("objective", mode="before")
    @classmethod
    def _coerce_objective(cls, v: Any) -> list[float]:
        return [float(x) for x in v]


class _PenalizedWhittle:
    """h = -(f + g) and grad f on raw J x M arrays, with the grid shapes cached."""

    def __init__(self, pg: Periodogram, params: ModelParams) -> None:
        self._pg_values = pg.values
        self._shapes = spectral_shapes(params, pg.window_len)
        self._noise_var = params.obs_noise_var
        self._smoothness = params.smoothness

    def value(self, psi_values: np.ndarray) -> float:
        gamma = _psd_matrix(self._shapes, self._noise_var, psi_values)
        log_lik = math.fsum(_window_terms(self._pg_values, gamma))
        return -(log_lik + _prior_value(psi_values, self._smoothness))

    def grad(self, psi_values: np.ndarray) -> np.ndarray:
        gamma = _psd_matrix(self._shapes, self._noise_var, psi_values)
        return _loglik_grad(self._shapes, psi_values, self._pg_values, gamma)


def prox_smoothness(v: np.ndarray, step: float, smoothness: float | str) -> np.ndarray:
    """Proximal map of the random-walk prior.

    Solves ``argmin_psi sum (v - psi)^2 / (2 step) + (lambda/2) sum (psi_m - psi_{m-1})^2``
    row by row with a scalar Kalman filter and RTS smoother: observations
    ``v[j]``, observation variance ``step``, random-walk variance ``1/lambda``.

    Args:
        v: J x M matrix of gradient-step outputs.
        step: Step size alpha > 0.
        smoothness: lambda >= 0, or ``"stationary"`` for lambda = inf.

    Returns:
        A new J x M matrix.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.ndim != 2:
        raise ValueError(f"v must be a J x M matrix, got shape {v.shape}")
    if not step > 0:
        raise ValueError(f"step must be > 0, got {step}")
    n_windows = v.shape[1]
    if smoothness == STATIONARY:
        return np.repeat(v.mean(axis=1, keepdims=True), n_windows, axis=1)
    lam = float(smoothness)
    if lam < 0:
        raise ValueError(f"smoothness must be >= 0, got {lam}")
    if lam == 0.0 or n_windows == 1:
        return v.copy()

    walk_var = 1.0 / lam
    filt_mean = np.empty_like(v)
    filt_var = np.empty(n_windows)
    pred_var = np.empty(n_windows)
    # Diffuse start: the first window has no prior term.
    filt_mean[:, 0] = v[:, 0]
    filt_var[0] = step
    for m in range(1, n_windows):
        pred_var[m] = filt_var[m - 1] + walk_var
        gain = pred_var[m] / (pred_var[m] + step)
        filt_mean[:, m] = filt_mean[:, m - 1] + gain * (v[:, m] - filt_mean[:, m - 1])
        filt_var[m] = (1.0 - gain) * pred_var[m]

    smoothed = filt_mean.copy()
    for m in range(n_windows - 2, -1, -1):
        back_gain = filt_var[m] / pred_var[m + 1]
        smoothed[:, m] = filt_mean[:, m] + back_gain * (
            smoothed[:, m + 1] - filt_mean[:, m]
        )
    return smoothed


def _bb_step(s: np.ndarray, r: np.ndarray, fallback: float) -> float:
    """Barzilai-Borwein step s's / s'r, or ``fallback`` when it is unusable."""
    curvature = float(np.vdot(s, r))
    if curvature <= 0.0 or not math.isfinite(curvature):
        return fallback
    step = float(np.vdot(s, s)) / curvature
    if not (step > 0.0 and math.isfinite(step)):
        return fallback
    return step


def _backtrack(
    objective: _PenalizedWhittle,
    anchor: np.ndarray,
    h_anchor: float,
    grad_anchor: np.ndarray,
    step: float,
    smoothness: float | str,
    bound: float,
    cfg: ApgConfig,
) -> tuple[np.ndarray, float, float, int, bool]:
    """Shrink ``step`` until the proximal candidate decreases h sufficiently.

    Returns the candidate, its h, the accepted step, the number of shrinks and
    whether a candidate was accepted; on exhaustion the anchor itself is
    returned, unprojected.
    """
    for attempt in range(cfg.max_backtracks):
        candidate = np.clip(
            prox_smoothness(anchor + step * grad_anchor, step, smoothness),
            -bound,
            bound,
        )
        h_candidate = objective.value(candidate)
        dist_sq = float(np.sum((candidate - anchor) ** 2))
        if h_candidate <= h_anchor - cfg.sufficient_decrease * dist_sq:
            return candidate, h_candidate, step, attempt, True
        step *= cfg.shrink
    return anchor.copy(), h_anchor, step, cfg.max_backtracks, False


def apg_fit_psi(
    pg: Periodogram,
    params: ModelParams,
    psi0: LogVarianceField,
    cfg: ApgConfig | None = None,
) -> tuple[LogVarianceField, ApgTrace]:
    """Fit the log-power field at fixed oscillator shapes.

    Args:
        pg: Windowed periodogram of the observations.
        params: Oscillator shapes, noise variance and smoothness.
        psi0: Starting log powers; must match ``pg`` and ``params``.
        cfg: Optimizer configuration; defaults to ``ApgConfig()``.

    Returns:
        The fitted log powers and the run's :class:`ApgTrace`. The objective
        trace of accepted iterates is nonincreasing.

    Raises:
        DataError: If the shapes of ``pg``, ``params`` and ``psi0`` disagree.
        NumericalError: If the objective becomes non-finite.
    """
    cfg = cfg or ApgConfig()
    if (psi0.n_windows, psi0.window_len) != (pg.n_windows, pg.window_len):
        raise DataError("psi0 does not match the periodogram's window layout")
    if psi0.n_components != params.n_components:
        raise DataError("psi0 does not match the number of model components")

    bound = cfg.log_power_bound
    smoothness = params.smoothness
    objective = _PenalizedWhittle(pg, params)

    start = np.array(psi0.values, dtype=np.float64)
    if params.is_stationary:
        start = prox_smoothness(start, 1.0, STATIONARY)
    start = np.clip(start, -bound, bound)

    active_bound = min(bound, float(np.max(np.abs(start))) + 1.0)
    fallback = 1.0 / lipschitz_bound(
        pg,
        params,
        log_power_bound=active_bound,
        max_lengthscale=cfg.max_lengthscale,
    )

    state = ApgState(psi=start, psi_prev=start, u=start, x=start, w=start)
    h_psi = objective.value(start)
    trace = ApgTrace(objective=[h_psi])
    w_prev: np.ndarray | None = None
    grad_w_prev = grad_psi_prev = np.zeros_like(start)

    for iteration in range(1, cfg.max_iters + 1):
        state.iteration = iteration
        w = state.extrapolate()
        grad_w = objective.grad(w)
        grad_psi = objective.grad(state.psi)
        if w_prev is None:
            step_w = step_psi = fallback
        else:
            step_w = _bb_step(
                state.u - w_prev, -objective.grad(state.u) + grad_w_prev, fallback
            )
            step_psi = _bb_step(
                state.x - state.psi_prev,
                -objective.grad(state.x) + grad_psi_prev,
                fallback,
            )

        h_w = objective.value(w)
        u_new, h_u, step_w, tries_w, ok_w = _backtrack(
            objective, w, h_w, grad_w, step_w, smoothness, bound, cfg
        )
        x_new, h_x, step_psi, tries_psi, ok_psi = _backtrack(
            objective, state.psi, h_psi, grad_psi, step_psi, smoothness, bound, cfg
        )
        if not (ok_w or ok_psi):
            trace.backtrack_exhausted = True
            logger.warning(
                f"apg: backtracking exhausted at iteration {iteration}; "
                "returning the last accepted iterate"
            )
            break
        if not ok_w:
            # w may lie outside the box and was never accepted
            h_u = math.inf

        if h_u <= h_x:
            psi_new, h_new, candidate, anchor, h_anchor = u_new, h_u, "u", w, h_w
        else:
            psi_new, h_new, candidate, anchor, h_anchor = (
                x_new,
                h_x,
                "x",
                state.psi,
                h_psi,
            )
        trace.steps.append(
            ApgStep(
                iteration=iteration,
                candidate=candidate,
                objective=h_new,
                anchor_objective=h_anchor,
                step_norm_sq=float(np.sum((psi_new - anchor) ** 2)),
                step_w=step_w,
                step_psi=step_psi,
                backtracks_w=tries_w,
                backtracks_psi=tries_psi,
            )
        )
        trace.objective.append(h_new)
        logger.debug(
            f"apg iter {iteration}: h={h_new:.10e} candidate={candidate} "
            f"step_w={step_w:.3e} step_psi={step_psi:.3e}"
        )

        h_old = h_psi
        state.step_w, state.step_psi = step_w, step_psi
        state.advance_momentum()
        state.psi_prev, state.psi = state.psi, psi_new
        state.u, state.x, state.w = u_new, x_new, w
        w_prev, grad_w_prev, grad_psi_prev = w, grad_w, grad_psi
        h_psi = h_new

        if iteration >= 2 and abs(h_new - h_old) <= cfg.tol * (1.0 + abs(h_new)):
            trace.converged = True
            break

    logger.debug(
        f"apg finished after {trace.iterations} iterations "
        f"(converged={trace.converged}, h={h_psi:.10e})"
    )
    fitted = LogVarianceField(
        values=state.psi, window_len=psi0.window_len, log_power_bound=bound
    )
    return fitted, trace


def _resolve_max_lengthscale(
    params: ModelParams, window_len: int, cfg: ApgConfig
) -> float:
    return (
        cfg.max_lengthscale
        or params.max_lengthscale
        or default_max_lengthscale(params.delta, window_len)
    )


def _refine_theta(
    pg: Periodogram,
    params: ModelParams,
    psi: LogVarianceField,
    cfg: ApgConfig,
    frozen: Sequence[bool] | None,
) -> tuple[ModelParams, str | None]:
    n_comp = params.n_components
    frozen_mask = np.zeros(n_comp, dtype=bool) if frozen is None else np.asarray(
        frozen, dtype=bool
    )
    if frozen_mask.shape != (n_comp,):
        raise ValueError(f"frozen must have {n_comp} entries, got {len(frozen_mask)}")
    l_max = _resolve_max_lengthscale(params, pg.window_len, cfg)
    l_min = _MIN_LENGTHSCALE_RATIO * params.delta
    free = ~frozen_mask

    def to_params(x: np.ndarray) -> ModelParams:
        log_l = x[:n_comp]
        # exp(log(l_max)) can round below l_max; pin the boundary exactly
        at_bound = log_l >= math.log(l_max) - _LOG_BOUNDARY_SLACK
        lengthscales = np.where(at_bound, l_max, np.clip(np.exp(log_l), l_min, l_max))
        omegas = np.array(params.center_freqs)
        omegas[free] = np.clip(x[n_comp:], 0.0, math.pi)
        return params.replace(
            lengthscales=lengthscales, center_freqs=omegas, max_lengthscale=l_max
        )

    def neg_loglik(x: np.ndarray) -> float:
        return -whittle_loglik(pg, to_params(x), psi)

    x0 = np.concatenate(
        [
            np.log(np.clip(params.lengthscales, l_min, l_max)),
            np.asarray(params.center_freqs)[free],
        ]
    )
    inside = all(l_min <= value <= l_max for value in params.lengthscales)
    start = params if inside else to_params(x0)
    f_start = whittle_loglik(pg, start, psi)
    result = minimize(
        neg_loglik,
        x0,
        method="CG",
        jac="3-point",
        options={
            "maxiter": cfg.theta_max_iters,
            "finite_diff_rel_step": cfg.finite_diff_rel_step,
        },
    )
    refined = to_params(result.x)
    f_refined = whittle_loglik(pg, refined, psi)
    if not math.isfinite(f_refined) or f_refined < f_start:
        message = (
            f"theta refinement failed ({result.message}); keeping the previous "
            "lengthscales and centre frequencies"
        )
        logger.warning(message)
        return start, message
    if not result.success:
        logger.debug(f"theta refinement stopped early: {result.message}")
    return refined, None


def refine_theta(
    pg: Periodogram,
    params: ModelParams,
    psi: LogVarianceField,
    cfg: ApgConfig | None = None,
    frozen: Sequence[bool] | None = None,
) -> ModelParams:
    """Maximize the Whittle likelihood over lengthscales and centre frequencies.

    Lengthscales are optimized on a log scale and projected into
    (0, l_max]; frequencies are projected into [0, pi]. Components flagged in
    ``frozen`` keep their centre frequency. The log powers ``psi`` and the
    noise variance stay fixed, and the returned parameters never have a lower
    likelihood than the input (after projection).
    """
    refined, _ = _refine_theta(pg, params, psi, cfg or ApgConfig(), frozen)
    return refined


def block_coordinate_fit(
    observations: np.ndarray,
    window_len: int,
    n_components: int,
    smoothness: float | str,
    cfg: ApgConfig | None = None,
    outer_iters: int = DEFAULT_OUTER_ITERS,
    *,
    delta: float,
    obs_noise_var: float | None = None,
    cutoff_hz: float | None = None,
    init: tuple[ModelParams, LogVarianceField] | None = None,
    frozen: Sequence[bool] | None = None,
    fit_theta: bool = True,
    enable_logging: bool = False,
) -> tuple[ModelParams, LogVarianceField, FitDiagnostics]:
    """Alternate log-power fits and theta refinement.

    Args:
        observations: The K samples of the record.
        window_len: Samples per window N; K must be a multiple of N.
        n_components: Number of oscillators J.
        smoothness: lambda >= 0 or ``"stationary"``.
        cfg: Optimizer configuration.
        outer_iters: Number of (psi, theta) rounds.
        delta: Sampling interval in seconds.
        obs_noise_var: Fixed noise variance; estimated from the record when
            omitted.
        cutoff_hz: Noise-floor cutoff used for the estimate and the
            initialization; defaults to 80% of the Nyquist frequency.
        init: Starting ``(params, psi)``; computed by
            :func:`plso.selection.initialize` when omitted.
        frozen: Per-component flags that keep centre frequencies fixed.
        fit_theta: Set to False to refit only the log powers.
        enable_logging: Enable console and file logging.

    Returns:
        Fitted parameters, fitted log powers and the outer-loop diagnostics,
        whose objective trace is nonincreasing.
    """
    _enable_logging(enable_logging)
    cfg = cfg or ApgConfig()
    if outer_iters < 0:
        raise ValueError(f"outer_iters must be >= 0, got {outer_iters}")
    pg = periodogram(observations, window_len)

    if init is None:
        from plso.selection import estimate_obs_noise, initialize

        if cutoff_hz is None:
            cutoff_hz = 0.4 / delta
        if obs_noise_var is None:
            obs_noise_var = estimate_obs_noise(observations, delta, cutoff_hz)
        init = initialize(
            observations,
            window_len,
            n_components,
            cutoff_hz,
            delta=delta,
            obs_noise_var=obs_noise_var,
            cfg=cfg,
        )
    params, psi = init
    changes: dict[str, Any] = {"smoothness": smoothness}
    if obs_noise_var is not None:
        changes["obs_noise_var"] = obs_noise_var
    params = params.replace(**changes)
    if params.n_components != n_components:
        raise ValueError(
            f"initial model has {params.n_components} components, expected {n_components}"
        )

    diagnostics = FitDiagnostics()
    if outer_iters == 0:
        return params, psi, diagnostics

    start = psi.values
    if params.is_stationary:
        start = prox_smoothness(start, 1.0, STATIONARY)
    start = np.clip(start, -cfg.log_power_bound, cfg.log_power_bound)
    diagnostics.objective.append(_PenalizedWhittle(pg, params).value(start))
    with log_stage(logger, f"fit J={n_components} lambda={params.smoothness}"):
        for round_index in range(outer_iters):
            psi, trace = apg_fit_psi(pg, params, psi, cfg)
            diagnostics.apg_iterations.append(trace.iterations)
            if trace.backtrack_exhausted:
                diagnostics.warnings.append(
                    f"round {round_index}: APG backtracking exhausted"
                )
            if fit_theta:
                params, warning = _refine_theta(pg, params, psi, cfg, frozen)
                if warning:
                    diagnostics.warnings.append(f"round {round_index}: {warning}")
            h = _PenalizedWhittle(pg, params).value(psi.values)
            diagnostics.objective.append(h)
            logger.info(
                f"round {round_index + 1}/{outer_iters}: h={h:.6f} "
                f"apg_iters={trace.iterations}"
            )
    return params, psi, diagnostics
