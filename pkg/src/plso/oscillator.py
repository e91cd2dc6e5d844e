"""Damped rotating oscillators: dynamics, second-order statistics and simulation."""

from __future__ import annotations

import math

import numpy as np

from plso.logging_utils import get_logger
from plso.models import LatentTrajectory, LogVarianceField, ModelParams, SpectrumGrid

logger = get_logger(__name__)


def hz_to_radians(freq_hz: float | np.ndarray, delta: float) -> float | np.ndarray:
    """Convert a frequency in Hz to radians per sample."""
    return 2.0 * math.pi * freq_hz * delta


def radians_to_hz(omega: float | np.ndarray, delta: float) -> float | np.ndarray:
    """Convert radians per sample to Hz."""
    return omega / (2.0 * math.pi * delta)


def default_max_lengthscale(delta: float, window_len: int) -> float:
    """Default lengthscale ceiling: a quarter of the window duration."""
    return window_len * delta / 4.0


def frequency_grid(window_len: int) -> np.ndarray:
    """Zero-based DFT grid 2*pi*n/N, n = 0..N-1, in radians per sample."""
    if window_len < 2:
        raise ValueError(f"window_len must be >= 2, got {window_len}")
    return 2.0 * math.pi * np.arange(window_len) / window_len


def rotation_matrix(omega: float) -> np.ndarray:
    if not math.isfinite(omega):
        raise ValueError(f"omega must be finite, got {omega}")
    c, s = math.cos(omega), math.sin(omega)
    return np.array([[c, -s], [s, c]])


def _check_component(params: ModelParams, j: int) -> None:
    if not 0 <= j < params.n_components:
        raise IndexError(
            f"component index {j} out of range for {params.n_components} components"
        )


def autocovariance(params: ModelParams, j: int, sigma2: float, n_lag: int) -> float:
    """Autocovariance of Re z_j at lag ``n_lag``: sigma^2 cos(w_j n) exp(-n delta / l_j)."""
    _check_component(params, j)
    if n_lag < 0:
        raise ValueError(f"n_lag must be >= 0, got {n_lag}")
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    omega = params.center_freqs[j]
    return sigma2 * math.cos(omega * n_lag) * math.exp(
        -n_lag * params.delta / params.lengthscales[j]
    )


def spectral_lobe(
    params: ModelParams, j: int, sigma2: float, omega: float | np.ndarray
) -> float | np.ndarray:
    """One Lorentzian-like lobe of component j centred at +w_j.

    Peaks at ``omega == w_j`` with value sigma^2 (1 + rho) / (1 - rho).
    """
    _check_component(params, j)
    rho = float(params.decay[j])
    shifted = np.asarray(omega) - params.center_freqs[j]
    value = sigma2 * (1.0 - rho**2) / (1.0 + rho**2 - 2.0 * rho * np.cos(shifted))
    return float(value) if np.ndim(value) == 0 else value


def component_spectrum(
    params: ModelParams, j: int, sigma2: float, omega: float | np.ndarray
) -> float | np.ndarray:
    """Spectral density of Re z_j, the transform of :func:`autocovariance`.

    The two lobes at +w_j and -w_j each carry half of the power so that the
    density integrates (over one period, divided by 2*pi) to ``sigma2``.
    """
    omega_arr = np.asarray(omega, dtype=np.float64)
    if np.any(np.abs(omega_arr) > math.pi + 1e-12):
        raise ValueError("omega must lie in [-pi, pi]")
    value = 0.5 * (
        spectral_lobe(params, j, sigma2, omega_arr)
        + spectral_lobe(params, j, sigma2, -omega_arr)
    )
    return float(value) if np.ndim(value) == 0 else value


def spectral_shapes(params: ModelParams, window_len: int) -> np.ndarray:
    """J x N matrix of unit-power component spectra on the DFT grid.

    The grid runs over [0, 2*pi); the spectrum is 2*pi periodic so the upper
    half of the grid is the mirror of the negative frequencies.
    """
    freqs = frequency_grid(window_len)
    rho = params.decay[:, None]
    centers = np.asarray(params.center_freqs)[:, None]
    numerator = 1.0 - rho**2
    plus = numerator / (1.0 + rho**2 - 2.0 * rho * np.cos(freqs[None, :] - centers))
    minus = numerator / (1.0 + rho**2 - 2.0 * rho * np.cos(-freqs[None, :] - centers))
    return 0.5 * (plus + minus)


def psd(params: ModelParams, log_powers: np.ndarray, window_len: int) -> SpectrumGrid:
    """Evaluate per-component spectra and the total PSD of one window."""
    log_powers = np.asarray(log_powers, dtype=np.float64)
    if log_powers.shape != (params.n_components,):
        raise ValueError(
            f"expected {params.n_components} log powers, got shape {log_powers.shape}"
        )
    per_component = np.exp(log_powers)[:, None] * spectral_shapes(params, window_len)
    total = params.obs_noise_var + per_component.sum(axis=0)
    return SpectrumGrid(
        freqs=frequency_grid(window_len), per_component=per_component, total=total
    )


def steady_state_covariance(params: ModelParams, j: int, sigma2: float) -> np.ndarray:
    """Stationary covariance of z_j, the fixed point of :func:`lyapunov_map`."""
    _check_component(params, j)
    if sigma2 <= 0:
        raise ValueError(f"sigma2 must be > 0, got {sigma2}")
    return sigma2 * np.eye(2)


def lyapunov_map(
    params: ModelParams, j: int, cov: np.ndarray, sigma2: float
) -> np.ndarray:
    """One step of P <- rho^2 R P R^T + sigma^2 (1 - rho^2) I."""
    rho = float(params.decay[j])
    rot = rotation_matrix(params.center_freqs[j])
    return rho**2 * rot @ cov @ rot.T + sigma2 * (1.0 - rho**2) * np.eye(2)


def propagate_window_covariance(
    params: ModelParams, j: int, sigma2_prev: float, sigma2_next: float, n_steps: int
) -> np.ndarray:
    """State covariance n = 1..n_steps samples after entering a new window.

    Starts from the steady state of the previous window and applies the
    Lyapunov map with the next window's power.
    """
    _check_component(params, j)
    cov = steady_state_covariance(params, j, sigma2_prev)
    out = np.empty((n_steps, 2, 2))
    for n in range(n_steps):
        cov = lyapunov_map(params, j, cov, sigma2_next)
        out[n] = cov
    return out


def transition_covariance(
    params: ModelParams, j: int, sigma2_prev: float, sigma2_next: float, n: int
) -> np.ndarray:
    """Closed form of :func:`propagate_window_covariance` at step ``n``.

    The gap to the new steady state decays as exp(-2 n delta / l_j).
    """
    _check_component(params, j)
    decay = math.exp(-2.0 * n * params.delta / params.lengthscales[j])
    return (sigma2_next + decay * (sigma2_prev - sigma2_next)) * np.eye(2)


def boundary_increment_covariance(
    params: ModelParams, j: int, sigma2_prev: float, sigma2_next: float
) -> np.ndarray:
    """Covariance of z_{k+1} - z_k when k is the last sample of a window.

    Reduces to ((1 - rho)^2 sigma_m^2 + (1 - rho^2) sigma_{m+1}^2) I for w_j = 0
    and vanishes as delta / l_j -> 0.
    """
    _check_component(params, j)
    rho = float(params.decay[j])
    omega = params.center_freqs[j]
    carried = sigma2_prev * (1.0 + rho**2 - 2.0 * rho * math.cos(omega))
    innovation = sigma2_next * (1.0 - rho**2)
    return (carried + innovation) * np.eye(2)


def simulate_generative(
    params: ModelParams,
    window_vars: LogVarianceField,
    seed: int | np.random.SeedSequence | None,
) -> tuple[np.ndarray, LatentTrajectory]:
    """Draw observations and latent states from the piecewise-stationary model.

    Args:
        params: Oscillator shapes, sampling interval and noise variance.
        window_vars: Log powers, one column per window.
        seed: Seed (or ``SeedSequence``) for the generator; equal seeds give
            bit-identical draws.

    Returns:
        The K observations and the latent trajectory that produced them.
    """
    if window_vars.n_components != params.n_components:
        raise ValueError(
            f"window_vars has {window_vars.n_components} components, "
            f"params has {params.n_components}"
        )
    rng = np.random.default_rng(seed)
    n_comp = params.n_components
    n_samples = window_vars.n_samples
    powers = window_vars.powers
    rho = params.decay
    cos_w = rho * np.cos(params.center_freqs)
    sin_w = rho * np.sin(params.center_freqs)

    window_of = np.arange(n_samples) // window_vars.window_len
    innovation_sd = np.sqrt(powers[:, window_of].T * (1.0 - rho**2))

    states = np.empty((n_samples, n_comp, 2))
    states[0] = np.sqrt(powers[:, 0])[:, None] * rng.standard_normal((n_comp, 2))
    shocks = rng.standard_normal((n_samples, n_comp, 2)) * innovation_sd[:, :, None]
    for k in range(1, n_samples):
        re, im = states[k - 1, :, 0], states[k - 1, :, 1]
        states[k, :, 0] = cos_w * re - sin_w * im + shocks[k, :, 0]
        states[k, :, 1] = sin_w * re + cos_w * im + shocks[k, :, 1]

    noise = math.sqrt(params.obs_noise_var) * rng.standard_normal(n_samples)
    observations = states[:, :, 0].sum(axis=1) + noise
    logger.debug(
        f"Simulated {n_samples} samples of {n_comp} components "
        f"over {window_vars.n_windows} windows"
    )
    return observations, LatentTrajectory(states=states, delta=params.delta)
