import math

import numpy as np
import pytest

from plso.models import LogVarianceField, ModelParams
from plso.oscillator import (
    autocovariance,
    boundary_increment_covariance,
    component_spectrum,
    default_max_lengthscale,
    frequency_grid,
    hz_to_radians,
    lyapunov_map,
    propagate_window_covariance,
    psd,
    radians_to_hz,
    rotation_matrix,
    simulate_generative,
    spectral_lobe,
    spectral_shapes,
    steady_state_covariance,
    transition_covariance,
)


def _single(lengthscale: float = 0.05, omega: float = 0.6, delta: float = 0.01) -> ModelParams:
    return ModelParams(
        delta=delta, obs_noise_var=0.5, lengthscales=(lengthscale,), center_freqs=(omega,)
    )


def test_unit_conversions_round_trip() -> None:
    assert hz_to_radians(10.0, 0.005) == pytest.approx(2 * math.pi * 0.05)
    assert radians_to_hz(hz_to_radians(3.0, 0.01), 0.01) == pytest.approx(3.0)
    assert default_max_lengthscale(0.01, 200) == pytest.approx(0.5)


def test_frequency_grid() -> None:
    grid = frequency_grid(4)
    np.testing.assert_allclose(grid, [0.0, math.pi / 2, math.pi, 3 * math.pi / 2])
    with pytest.raises(ValueError):
        frequency_grid(1)


def test_autocovariance_lag_zero_is_power() -> None:
    params = _single()
    assert autocovariance(params, 0, 2.5, 0) == pytest.approx(2.5)


def test_autocovariance_decays_with_lag() -> None:
    params = _single(lengthscale=0.1, omega=0.0)
    assert autocovariance(params, 0, 1.0, 10) == pytest.approx(math.exp(-1.0))


def test_autocovariance_preconditions() -> None:
    params = _single()
    with pytest.raises(ValueError):
        autocovariance(params, 0, 1.0, -1)
    with pytest.raises(ValueError):
        autocovariance(params, 0, 0.0, 1)
    with pytest.raises(IndexError):
        autocovariance(params, 1, 1.0, 1)


def test_spectral_lobe_peak_value() -> None:
    params = _single()
    rho = float(params.decay[0])
    peak = spectral_lobe(params, 0, 2.0, 0.6)
    assert peak == pytest.approx(2.0 * (1 + rho) / (1 - rho))


def test_component_spectrum_is_transform_of_autocovariance() -> None:
    params = _single(lengthscale=0.05, omega=0.6)
    omegas = np.linspace(-math.pi, math.pi, 17)
    lags = np.arange(1, 800)
    acov = np.array([autocovariance(params, 0, 1.7, int(n)) for n in lags])
    expected = 1.7 + 2.0 * (acov[None, :] * np.cos(omegas[:, None] * lags[None, :])).sum(axis=1)
    np.testing.assert_allclose(component_spectrum(params, 0, 1.7, omegas), expected, rtol=1e-10)


def test_component_spectrum_is_even_and_averages_to_power() -> None:
    params = _single(lengthscale=0.05, omega=1.1)
    omegas = np.linspace(0, math.pi, 9)
    np.testing.assert_allclose(
        component_spectrum(params, 0, 1.0, omegas),
        component_spectrum(params, 0, 1.0, -omegas),
    )
    shapes = spectral_shapes(params, 512)
    assert shapes.mean() == pytest.approx(1.0, rel=1e-10)


def test_component_spectrum_rejects_out_of_band() -> None:
    with pytest.raises(ValueError):
        component_spectrum(_single(), 0, 1.0, 4.0)


def test_psd_adds_noise_floor_once() -> None:
    params = ModelParams(
        delta=0.01, obs_noise_var=0.5, lengthscales=(0.1, 0.3), center_freqs=(0.4, 1.5)
    )
    grid = psd(params, np.array([0.0, math.log(2.0)]), 32)
    np.testing.assert_allclose(grid.total, 0.5 + grid.per_component.sum(axis=0))
    np.testing.assert_allclose(grid.per_component[1], 2.0 * spectral_shapes(params, 32)[1])
    with pytest.raises(ValueError):
        psd(params, np.zeros(3), 32)


def test_noise_only_limit() -> None:
    params = _single()
    grid = psd(params, np.array([-30.0]), 64)
    np.testing.assert_allclose(grid.total, 0.5, atol=1e-10)


def test_steady_state_is_fixed_point_of_lyapunov_map() -> None:
    params = _single(omega=0.9)
    steady = steady_state_covariance(params, 0, 3.0)
    np.testing.assert_allclose(lyapunov_map(params, 0, steady, 3.0), steady, atol=1e-12)


def test_window_boundary_covariance_decays_exponentially() -> None:
    params = ModelParams(
        delta=0.01, obs_noise_var=1.0, lengthscales=(0.07, 0.4), center_freqs=(0.5, 2.0)
    )
    for j in range(2):
        propagated = propagate_window_covariance(params, j, 4.0, 0.5, 60)
        for n in range(1, 61):
            np.testing.assert_allclose(
                propagated[n - 1],
                transition_covariance(params, j, 4.0, 0.5, n),
                rtol=0.0,
                atol=1e-10,
            )


def test_boundary_increment_matches_state_recursion() -> None:
    params = _single(lengthscale=0.2, omega=0.8)
    rho = float(params.decay[0])
    a = rho * rotation_matrix(0.8) - np.eye(2)
    expected = 2.0 * a @ a.T + 5.0 * (1 - rho**2) * np.eye(2)
    np.testing.assert_allclose(
        boundary_increment_covariance(params, 0, 2.0, 5.0), expected, atol=1e-12
    )


def test_boundary_increment_zero_frequency_form() -> None:
    params = _single(lengthscale=0.2, omega=0.0)
    rho = float(params.decay[0])
    expected = ((1 - rho) ** 2 * 2.0 + (1 - rho**2) * 5.0) * np.eye(2)
    np.testing.assert_allclose(boundary_increment_covariance(params, 0, 2.0, 5.0), expected)


def test_boundary_increment_vanishes_for_long_lengthscales() -> None:
    params = _single(lengthscale=1e6, omega=0.0)
    assert np.max(boundary_increment_covariance(params, 0, 1.0, 1.0)) < 1e-6


def test_simulation_is_deterministic(
    two_component_params: ModelParams, small_field: LogVarianceField
) -> None:
    y1, traj1 = simulate_generative(two_component_params, small_field, seed=3)
    y2, traj2 = simulate_generative(two_component_params, small_field, seed=3)
    y3, _ = simulate_generative(two_component_params, small_field, seed=4)
    np.testing.assert_array_equal(y1, y2)
    np.testing.assert_array_equal(traj1.states, traj2.states)
    assert not np.array_equal(y1, y3)
    assert y1.shape == (small_field.n_samples,)
    assert traj1.states.shape == (small_field.n_samples, 2, 2)


def test_simulated_power_matches_window_variance() -> None:
    params = _single(lengthscale=0.02, omega=0.7)
    field = LogVarianceField(values=[[math.log(4.0)] * 50], window_len=400)
    _, traj = simulate_generative(params, field, seed=0)
    assert np.var(traj.real_parts[:, 0]) == pytest.approx(4.0, rel=0.05)


def test_simulation_rejects_mismatched_field(two_component_params: ModelParams) -> None:
    field = LogVarianceField(values=np.zeros((1, 2)), window_len=8)
    with pytest.raises(ValueError):
        simulate_generative(two_component_params, field, seed=0)
