import math
from pathlib import Path

import numpy as np
import pytest
from pydantic import ValidationError

from plso.config import (
    DEFAULT_OUTPUT_DIR,
    ENV_OUTPUT_DIR,
    GenerativeSpec,
    RunConfig,
    default_output_dir,
    load_generative_spec,
    load_run_config,
    read_config_file,
)
from plso.models import STATIONARY


def _base(**changes: object) -> dict[str, object]:
    return {"sampling_rate": 200.0, "window_seconds": 2.0, "n_components": 2, **changes}


def test_run_config_defaults() -> None:
    cfg = RunConfig(**_base())
    assert cfg.window_len == 400
    assert cfg.delta == pytest.approx(0.005)
    assert cfg.smoothness == "cv"
    assert cfg.resolved_cutoff_hz == pytest.approx(80.0)
    assert cfg.lambda_grid[-1] == STATIONARY
    selection = cfg.selection_config()
    assert selection.cutoff_hz == pytest.approx(80.0)
    assert selection.frozen is None


def test_window_options_are_exclusive() -> None:
    with pytest.raises(ValidationError):
        RunConfig(sampling_rate=200.0, n_components=1)
    with pytest.raises(ValidationError):
        RunConfig(**_base(window_samples=400))
    assert RunConfig(sampling_rate=200.0, window_samples=128, n_components=1).window_len == 128


def test_window_seconds_must_be_whole_samples() -> None:
    with pytest.raises(ValidationError):
        RunConfig(**_base(window_seconds=0.0123))


def test_component_options_are_exclusive() -> None:
    with pytest.raises(ValidationError):
        RunConfig(sampling_rate=200.0, window_seconds=2.0)
    with pytest.raises(ValidationError):
        RunConfig(**_base(component_candidates=[1, 2]))
    with pytest.raises(ValidationError):
        RunConfig(sampling_rate=200.0, window_seconds=2.0, component_candidates=[])


def test_cutoff_must_lie_below_nyquist() -> None:
    with pytest.raises(ValidationError):
        RunConfig(**_base(cutoff_hz=100.0))
    assert RunConfig(**_base(cutoff_hz=60.0)).resolved_cutoff_hz == 60.0


@pytest.mark.parametrize(
    ("given", "expected"),
    [("CV", "cv"), ("Stationary", STATIONARY), ("2.5", 2.5), (0, 0.0)],
)
def test_smoothness_coercion(given: object, expected: object) -> None:
    assert RunConfig(**_base(smoothness=given)).smoothness == expected


@pytest.mark.parametrize("given", ["smooth", -1.0, math.inf])
def test_smoothness_rejects_invalid(given: object) -> None:
    with pytest.raises(ValidationError):
        RunConfig(**_base(smoothness=given))


def test_lambda_grid_accepts_stationary_marker() -> None:
    cfg = RunConfig(**_base(lambda_grid=["0", 1, "STATIONARY"]))
    assert cfg.lambda_grid == [0.0, 1.0, STATIONARY]
    with pytest.raises(ValidationError):
        RunConfig(**_base(lambda_grid=[]))


def test_freeze_flags_follow_component_count() -> None:
    cfg = RunConfig(**_base(freeze_center_freqs=[True, False]))
    assert cfg.selection_config().frozen == (True, False)
    with pytest.raises(ValidationError):
        RunConfig(**_base(freeze_center_freqs=[True]))
    with pytest.raises(ValidationError):
        RunConfig(
            sampling_rate=200.0,
            window_seconds=2.0,
            component_candidates=[1, 2],
            freeze_center_freqs=[True],
        )


def test_unknown_keys_are_rejected() -> None:
    with pytest.raises(ValidationError):
        RunConfig(**_base(n_iterations=4))


def test_load_run_config_merges_file_and_overrides(tmp_path: Path) -> None:
    path = tmp_path / "run.yaml"
    path.write_text(
        "sampling_rate: 100\n"
        "window_samples: 64\n"
        "n_components: 3\n"
        "smoothness: 1.0\n"
        "optimizer:\n"
        "  max_iters: 40\n"
        "  tol: 1.0e-6\n",
        encoding="utf-8",
    )
    cfg = load_run_config(
        path,
        {"smoothness": "stationary", "seed": None, "optimizer": {"max_iters": 10}},
    )
    assert cfg.smoothness == STATIONARY
    assert cfg.seed == 0
    assert cfg.optimizer.max_iters == 10
    assert cfg.optimizer.tol == pytest.approx(1e-6)
    assert cfg.window_len == 64


def test_load_run_config_without_file() -> None:
    cfg = load_run_config(None, _base(seed=9))
    assert cfg.seed == 9


def test_read_config_file_requires_a_mapping(tmp_path: Path) -> None:
    empty = tmp_path / "empty.yaml"
    empty.write_text("", encoding="utf-8")
    assert read_config_file(empty) == {}
    listing = tmp_path / "list.yaml"
    listing.write_text("- 1\n- 2\n", encoding="utf-8")
    with pytest.raises(ValueError):
        read_config_file(listing)


def test_output_dir_comes_from_environment(
    monkeypatch: pytest.MonkeyPatch, tmp_path: Path
) -> None:
    monkeypatch.setenv(ENV_OUTPUT_DIR, str(tmp_path / "runs"))
    assert default_output_dir() == tmp_path / "runs"
    assert RunConfig(**_base()).output_dir == tmp_path / "runs"
    monkeypatch.delenv(ENV_OUTPUT_DIR)
    assert default_output_dir() == Path(DEFAULT_OUTPUT_DIR)


def test_generative_spec(tmp_path: Path) -> None:
    path = tmp_path / "model.json"
    path.write_text(
        '{"sampling_rate": 100, "window_len": 32, "center_freqs_hz": [5, 20],'
        ' "lengthscales_s": [0.5, 0.2], "log_powers": [[0, 1], [1, 0]],'
        ' "noise_var": 0.5}',
        encoding="utf-8",
    )
    spec = load_generative_spec(path)
    params = spec.to_params()
    np.testing.assert_allclose(params.center_freqs, [0.1 * math.pi, 0.4 * math.pi])
    assert params.obs_noise_var == 0.5
    field = spec.to_field()
    assert field.n_samples == 64
    np.testing.assert_array_equal(field.values, [[0.0, 1.0], [1.0, 0.0]])


def test_generative_spec_rejects_ragged_shapes() -> None:
    with pytest.raises(ValidationError):
        GenerativeSpec(
            sampling_rate=100,
            window_len=32,
            center_freqs_hz=[5],
            lengthscales_s=[0.5, 0.2],
            log_powers=[[0.0]],
            noise_var=1.0,
        )
    with pytest.raises(ValidationError):
        GenerativeSpec(
            sampling_rate=100,
            window_len=32,
            center_freqs_hz=[5, 20],
            lengthscales_s=[0.5, 0.2],
            log_powers=[[0.0, 1.0], [1.0]],
            noise_var=1.0,
        )
