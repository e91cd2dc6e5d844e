import json
from pathlib import Path

import pandas as pd
import pytest

from plso import cli
from plso.cli import EXIT_DATA, EXIT_NUMERICAL, EXIT_OK, EXIT_USAGE, main
from plso.errors import NumericalError
from plso.simulation import BenchmarkResult, MetricsReport

GENERATIVE_SPEC = {
    "sampling_rate": 100,
    "window_len": 32,
    "center_freqs_hz": [5.0, 20.0],
    "lengthscales_s": [0.2, 0.1],
    "log_powers": [[1.0, 1.5, 2.0, 1.5, 1.0, 0.5, 1.0, 1.5], [0.5] * 8],
    "noise_var": 0.5,
}


@pytest.fixture(scope="module")
def workspace(tmp_path_factory: pytest.TempPathFactory) -> Path:
    """A simulated record and a model fitted to it."""
    root = tmp_path_factory.mktemp("cli")
    spec_path = root / "spec.json"
    spec_path.write_text(json.dumps(GENERATIVE_SPEC), encoding="utf-8")
    assert main(["simulate", "--spec", str(spec_path), "--seed", "3", "--output-dir", str(root / "sim")]) == EXIT_OK
    code = main(
        [
            "fit",
            "--input", str(root / "sim" / "observations.csv"),
            "--sampling-rate", "100",
            "--window-samples", "32",
            "--components", "2",
            "--smoothness", "1.0",
            "--outer-iters", "1",
            "--output-dir", str(root / "fit"),
        ]
    )
    assert code == EXIT_OK
    return root


def test_simulate_writes_record_truth_and_manifest(workspace: Path):
    sim = workspace / "sim"
    observations = pd.read_csv(sim / "observations.csv")
    assert list(observations.columns) == ["value"]
    assert len(observations) == 256
    truth = pd.read_csv(sim / "ground_truth.csv")
    assert list(truth.columns) == ["k", "time_s", "component_0", "component_1"]
    manifest = json.loads((sim / "manifest.json").read_text())
    assert manifest["kind"] == "generative"
    assert manifest["seed"] == 3
    assert manifest["n_samples"] == 256


def test_simulate_is_deterministic(workspace: Path, tmp_path: Path):
    spec_path = workspace / "spec.json"
    assert main(["simulate", "--spec", str(spec_path), "--seed", "3", "--output-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "observations.csv").read_bytes() == (
        workspace / "sim" / "observations.csv"
    ).read_bytes()
    assert main(["simulate", "--spec", str(spec_path), "--seed", "4", "--output-dir", str(tmp_path)]) == EXIT_OK
    assert (tmp_path / "observations.csv").read_bytes() != (
        workspace / "sim" / "observations.csv"
    ).read_bytes()


def test_fit_writes_model_and_selection(workspace: Path):
    model = json.loads((workspace / "fit" / "model.json").read_text())
    assert model["schema_version"] == "1.0"
    assert model["params"]["smoothness"] == 1.0
    assert len(model["psi"]["values"]) == 2
    assert len(model["psi"]["values"][0]) == 8
    assert len(model["provenance"]["input_digest"]) == 64
    selection = json.loads((workspace / "fit" / "selection.json").read_text())
    assert selection["chosen_j"] == 2
    assert "init_psi" not in selection


def test_decompose_writes_components_and_spectrogram(workspace: Path, tmp_path: Path, capsys):
    code = main(
        [
            "decompose",
            "--model", str(workspace / "fit" / "model.json"),
            "--input", str(workspace / "sim" / "observations.csv"),
            "--output-dir", str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    printed = capsys.readouterr().out.split()
    assert str(tmp_path / "spectrogram.csv") in printed
    component = pd.read_csv(tmp_path / "component_1.csv")
    assert list(component.columns) == ["k", "time_s", "mean", "ci_lower", "ci_upper"]
    assert (component["ci_lower"] <= component["ci_upper"]).all()
    spectrogram = pd.read_csv(tmp_path / "spectrogram.csv")
    assert spectrogram.shape == (8, 33)


def test_sample_writes_summary_and_phases(workspace: Path, tmp_path: Path):
    code = main(
        [
            "sample",
            "--model", str(workspace / "fit" / "model.json"),
            "--input", str(workspace / "sim" / "observations.csv"),
            "--n-samples", "60",
            "--seed", "1",
            "--write-trajectories",
            "--output-dir", str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    assert (tmp_path / "samples_summary.csv").exists()
    trajectories = pd.read_csv(tmp_path / "trajectories_0.csv")
    assert trajectories.shape == (256, 61)
    phase = pd.read_csv(tmp_path / "phase_1.csv")
    assert list(phase.columns) == ["k", "time_s", "mean", "lower", "upper", "degenerate"]


def test_sample_skips_phases_for_small_ensembles(workspace: Path, tmp_path: Path):
    code = main(
        [
            "sample",
            "--model", str(workspace / "fit" / "model.json"),
            "--input", str(workspace / "sim" / "observations.csv"),
            "--n-samples", "5",
            "--output-dir", str(tmp_path),
        ]
    )
    assert code == EXIT_OK
    assert (tmp_path / "samples_summary.csv").exists()
    assert not (tmp_path / "phase_0.csv").exists()


def test_bad_csv_exits_with_data_error(tmp_path: Path, capsys):
    bad = tmp_path / "bad.csv"
    bad.write_text("value\n1.0\nfoo\n", encoding="utf-8")
    code = main(
        ["fit", "--input", str(bad), "--sampling-rate", "100", "--window-samples", "2",
         "--components", "1", "--smoothness", "0", "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_DATA
    assert "line 3" in capsys.readouterr().err


def test_partial_window_exits_with_data_error(workspace: Path, tmp_path: Path):
    code = main(
        ["fit", "--input", str(workspace / "sim" / "observations.csv"), "--sampling-rate", "100",
         "--window-samples", "30", "--components", "1", "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_DATA


def test_decompose_rejects_mismatched_record(workspace: Path, tmp_path: Path):
    short = tmp_path / "short.csv"
    short.write_text("value\n" + "0.5\n" * 64, encoding="utf-8")
    code = main(
        ["decompose", "--model", str(workspace / "fit" / "model.json"), "--input", str(short),
         "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_DATA


def test_invalid_configuration_exits_with_usage_error(workspace: Path, tmp_path: Path):
    observations = str(workspace / "sim" / "observations.csv")
    assert main(["fit", "--input", observations, "--components", "1"]) == EXIT_USAGE
    assert main(
        ["fit", "--input", observations, "--sampling-rate", "100", "--window-samples", "32"]
    ) == EXIT_USAGE
    assert main(["transmogrify"]) == EXIT_USAGE
    assert main(["fit", "--candidates", "1,x"]) == EXIT_USAGE


def test_future_model_file_exits_with_usage_error(workspace: Path, tmp_path: Path):
    payload = json.loads((workspace / "fit" / "model.json").read_text())
    payload["schema_version"] = "2.0"
    future = tmp_path / "model.json"
    future.write_text(json.dumps(payload), encoding="utf-8")
    code = main(
        ["decompose", "--model", str(future), "--input", str(workspace / "sim" / "observations.csv"),
         "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_USAGE


def test_numerical_failure_exits_with_code_four(
    workspace: Path, tmp_path: Path, monkeypatch: pytest.MonkeyPatch
):
    def broken(*args: object, **kwargs: object) -> None:
        raise NumericalError("innovation variance -1 at sample 0", stage="kalman")

    monkeypatch.setattr(cli, "kalman_smooth", broken)
    code = main(
        ["decompose", "--model", str(workspace / "fit" / "model.json"),
         "--input", str(workspace / "sim" / "observations.csv"), "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_NUMERICAL


def test_missing_input_is_a_usage_error(tmp_path: Path, capsys: pytest.CaptureFixture[str]):
    code = main(
        ["fit", "--input", str(tmp_path / "missing.csv"), "--sampling-rate", "100",
         "--window-samples", "32", "--components", "1", "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_USAGE
    assert "missing.csv" in capsys.readouterr().err


def test_unwritable_output_dir_is_a_usage_error(workspace: Path, tmp_path: Path):
    blocker = tmp_path / "taken"
    blocker.write_text("not a directory\n")
    code = main(
        ["simulate", "--spec", str(workspace / "spec.json"), "--seed", "0",
         "--output-dir", str(blocker / "out")]
    )
    assert code == EXIT_USAGE


def test_bench_writes_summary_table(tmp_path: Path, monkeypatch: pytest.MonkeyPatch):
    captured: dict[str, object] = {}

    def fake_benchmark(seeds, modes, cfg, spec, **kwargs):
        captured.update(seeds=seeds, modes=modes, cutoff=cfg.cutoff_hz)
        report = MetricsReport(mse=(1.0, 2.0), jump=(0.1, 0.2), is_div=0.5)
        return BenchmarkResult(rows={seed: {"cv": report} for seed in seeds})

    monkeypatch.setattr(cli, "run_benchmark", fake_benchmark)
    code = main(
        ["bench", "--realizations", "2", "--first-seed", "5", "--modes", "0,cv",
         "--cutoff-hz", "40", "--no-progress", "--output-dir", str(tmp_path)]
    )
    assert code == EXIT_OK
    assert captured == {"seeds": [5, 6], "modes": [0.0, "cv"], "cutoff": 40.0}
    summary = pd.read_csv(tmp_path / "bench.csv")
    assert list(summary.columns) == ["mode", "metric", "value"]
    assert set(summary["metric"]) == {"mse_z1", "mse_z2", "jump_z1", "jump_z2", "is_div"}
    payload = json.loads((tmp_path / "bench.json").read_text())
    assert payload["seeds"] == [5, 6]
    assert sorted(payload["results"]["rows"]) == ["5", "6"]


def test_bench_rejects_unknown_mode():
    assert main(["bench", "--modes", "0,smooth"]) == EXIT_USAGE
