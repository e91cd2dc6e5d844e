import math

import numpy as np
import pytest

from plso.errors import DataError
from plso.models import STATIONARY, LogVarianceField, ModelParams, Periodogram
from plso.oscillator import spectral_shapes
from plso.whittle import (
    evaluate_objective,
    grad_loglik,
    lipschitz_bound,
    log_prior,
    model_psd,
    periodogram,
    whittle_loglik,
    whittle_loglik_per_window,
)


def _random_instance(
    rng: np.random.Generator,
) -> tuple[Periodogram, ModelParams, LogVarianceField]:
    n_comp = int(rng.integers(1, 5))
    n_windows = int(rng.integers(1, 9))
    window_len = int(rng.integers(4, 65))
    params = ModelParams(
        delta=0.01,
        obs_noise_var=float(rng.uniform(0.2, 2.0)),
        lengthscales=rng.uniform(0.02, 0.5, n_comp),
        center_freqs=rng.uniform(0.0, math.pi, n_comp),
    )
    psi = LogVarianceField(
        values=rng.uniform(-1.0, 1.0, (n_comp, n_windows)), window_len=window_len
    )
    pg = Periodogram(
        values=rng.exponential(2.0, (n_windows, window_len)), window_len=window_len
    )
    return pg, params, psi


def test_periodogram_shape_and_parseval(rng: np.random.Generator) -> None:
    y = rng.standard_normal(96)
    pg = periodogram(y, 32)
    assert pg.values.shape == (3, 32)
    np.testing.assert_allclose(pg.values.sum(axis=1), (y.reshape(3, 32) ** 2).sum(axis=1))


def test_periodogram_rejects_partial_window() -> None:
    with pytest.raises(DataError, match="truncate the record to 96"):
        periodogram(np.zeros(100), 32)
    with pytest.raises(DataError):
        periodogram(np.zeros((4, 8)), 8)
    with pytest.raises(ValueError):
        periodogram(np.zeros(8), 1)


def test_loglik_is_sum_of_window_terms(
    small_record: np.ndarray, two_component_params: ModelParams, small_field: LogVarianceField
) -> None:
    pg = periodogram(small_record, small_field.window_len)
    terms = whittle_loglik_per_window(pg, two_component_params, small_field)
    assert terms.shape == (small_field.n_windows,)
    assert whittle_loglik(pg, two_component_params, small_field) == pytest.approx(
        math.fsum(terms)
    )


def test_loglik_is_invariant_to_window_order(
    small_record: np.ndarray, two_component_params: ModelParams, small_field: LogVarianceField
) -> None:
    pg = periodogram(small_record, small_field.window_len)
    order = np.array([2, 0, 3, 1])
    shuffled_pg = Periodogram(values=pg.values[order], window_len=pg.window_len)
    shuffled_psi = small_field.with_values(small_field.values[:, order])
    assert whittle_loglik(pg, two_component_params, small_field) == whittle_loglik(
        shuffled_pg, two_component_params, shuffled_psi
    )


def test_loglik_matches_closed_form_single_bin() -> None:
    params = ModelParams(
        delta=0.01, obs_noise_var=1.0, lengthscales=(0.1,), center_freqs=(0.5,)
    )
    psi = LogVarianceField(values=[[0.0]], window_len=2)
    pg = Periodogram(values=[[2.0, 3.0]], window_len=2)
    gamma = 1.0 + spectral_shapes(params, 2)[0]
    expected = -0.5 * float(np.sum(np.log(gamma) + np.array([2.0, 3.0]) / gamma))
    assert whittle_loglik(pg, params, psi) == pytest.approx(expected)


def test_loglik_rejects_layout_mismatch(
    small_record: np.ndarray, two_component_params: ModelParams
) -> None:
    pg = periodogram(small_record, 32)
    with pytest.raises(DataError):
        whittle_loglik(pg, two_component_params, LogVarianceField(values=np.zeros((2, 3)), window_len=32))
    with pytest.raises(DataError):
        whittle_loglik(pg, two_component_params, LogVarianceField(values=np.zeros((1, 4)), window_len=32))


def test_gradient_matches_central_differences(rng: np.random.Generator) -> None:
    eps = 1e-6
    for _ in range(50):
        pg, params, psi = _random_instance(rng)
        analytic = grad_loglik(pg, params, psi)
        numeric = np.empty_like(analytic)
        for idx in np.ndindex(*analytic.shape):
            up = np.array(psi.values)
            down = np.array(psi.values)
            up[idx] += eps
            down[idx] -= eps
            numeric[idx] = (
                whittle_loglik(pg, params, psi.with_values(up))
                - whittle_loglik(pg, params, psi.with_values(down))
            ) / (2 * eps)
        np.testing.assert_allclose(numeric, analytic, rtol=1e-5, atol=1e-6)


def test_log_prior_values() -> None:
    psi = LogVarianceField(values=[[0.0, 1.0, 3.0], [2.0, 2.0, 2.0]], window_len=4)
    assert log_prior(psi, 2.0) == pytest.approx(-5.0)
    assert log_prior(psi, 0.0) == 0.0
    assert log_prior(psi, STATIONARY) == -math.inf
    flat = LogVarianceField(values=[[1.0, 1.0]], window_len=4)
    assert log_prior(flat, STATIONARY) == 0.0
    with pytest.raises(ValueError):
        log_prior(psi, -1.0)


def test_log_prior_single_window_is_zero() -> None:
    psi = LogVarianceField(values=[[4.0]], window_len=4)
    assert log_prior(psi, 10.0) == 0.0


def test_model_psd_noise_only_limit(two_component_params: ModelParams) -> None:
    psi = LogVarianceField(values=np.full((2, 3), -30.0), window_len=16)
    gamma = model_psd(two_component_params, psi)
    assert gamma.shape == (3, 16)
    np.testing.assert_allclose(gamma, two_component_params.obs_noise_var, rtol=1e-10)


def test_lipschitz_bound_formula(
    small_record: np.ndarray, two_component_params: ModelParams
) -> None:
    pg = periodogram(small_record, 32)
    value = lipschitz_bound(pg, two_component_params, log_power_bound=2.0, max_lengthscale=0.08)
    rho = math.exp(-0.01 / 0.08)
    c_alpha = (1 + rho) / (1 - rho)
    expected = 2 * 4 * 32 * c_alpha * math.exp(2.0) * (1 + pg.max_power)
    assert value == pytest.approx(expected)


def test_evaluate_objective_combines_terms(
    small_record: np.ndarray, two_component_params: ModelParams, small_field: LogVarianceField
) -> None:
    pg = periodogram(small_record, 32)
    report = evaluate_objective(pg, two_component_params, small_field)
    assert report.total == pytest.approx(report.log_lik + report.log_prior)
    assert report.log_prior == pytest.approx(log_prior(small_field, 1.0))
    np.testing.assert_array_equal(
        report.grad, grad_loglik(pg, two_component_params, small_field)
    )


def test_gradient_lipschitz_ratio_stays_below_the_bound(
    small_record: np.ndarray, two_component_params: ModelParams, small_field: LogVarianceField
) -> None:
    pg = periodogram(small_record, 32)
    bound = 2.0
    constant = lipschitz_bound(
        pg, two_component_params, log_power_bound=bound, max_lengthscale=0.5
    )
    rng = np.random.default_rng(31)
    worst = 0.0
    for _ in range(1000):
        first = rng.uniform(-bound, bound, small_field.values.shape)
        second = rng.uniform(-bound, bound, small_field.values.shape)
        change = grad_loglik(
            pg, two_component_params, small_field.with_values(first)
        ) - grad_loglik(pg, two_component_params, small_field.with_values(second))
        worst = max(worst, float(np.linalg.norm(change) / np.linalg.norm(first - second)))
    assert 0.0 < worst <= constant
