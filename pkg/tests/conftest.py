import math

import numpy as np
import pytest
from dotenv import find_dotenv, load_dotenv

from plso.models import LogVarianceField, ModelParams
from plso.oscillator import hz_to_radians, simulate_generative

load_dotenv(find_dotenv(), override=False)

DELTA = 0.01


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240501)


@pytest.fixture
def two_component_params() -> ModelParams:
    return ModelParams(
        delta=DELTA,
        smoothness=1.0,
        obs_noise_var=1.0,
        lengthscales=(0.5, 0.2),
        center_freqs=(hz_to_radians(5.0, DELTA), hz_to_radians(20.0, DELTA)),
    )


@pytest.fixture
def small_field() -> LogVarianceField:
    return LogVarianceField(
        values=[[2.0, 2.5, 3.0, 2.0], [1.5, 1.5, 2.0, 1.0]], window_len=32
    )


@pytest.fixture
def small_record(
    two_component_params: ModelParams, small_field: LogVarianceField
) -> np.ndarray:
    observations, _ = simulate_generative(two_component_params, small_field, seed=7)
    return observations


@pytest.fixture
def long_record() -> tuple[np.ndarray, ModelParams, LogVarianceField]:
    """Two well-separated oscillators over 16 windows of 128 samples."""
    params = ModelParams(
        delta=DELTA,
        smoothness=1.0,
        obs_noise_var=1.0,
        lengthscales=(0.1, 0.1),
        center_freqs=(hz_to_radians(5.0, DELTA), hz_to_radians(20.0, DELTA)),
    )
    m = np.arange(16)
    values = np.vstack(
        [2.0 + 0.5 * np.sin(2 * math.pi * m / 16), np.full(16, 1.5)]
    )
    field = LogVarianceField(values=values, window_len=128)
    observations, _ = simulate_generative(params, field, seed=11)
    return observations, params, field
