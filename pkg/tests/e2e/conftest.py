import os

import pytest

from plso.selection import SelectionConfig
from plso.simulation import DEFAULT_BENCH_CUTOFF_HZ, ExperimentSpec


BENCHMARK_SKIP_REASON = (
    "Set PLSO_RUN_BENCHMARKS=1 to run the full-length simulation benchmarks."
)


@pytest.fixture(scope="session", autouse=True)
def require_benchmark_opt_in() -> None:
    if not os.getenv("PLSO_RUN_BENCHMARKS"):
        pytest.skip(BENCHMARK_SKIP_REASON)


@pytest.fixture(scope="session")
def experiment() -> ExperimentSpec:
    return ExperimentSpec()


@pytest.fixture(scope="session")
def bench_cfg(experiment: ExperimentSpec) -> SelectionConfig:
    return SelectionConfig(delta=experiment.delta, cutoff_hz=DEFAULT_BENCH_CUTOFF_HZ)
