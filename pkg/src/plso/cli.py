"""Command-line entry point: simulate, fit, decompose, sample and bench."""

from __future__ import annotations

import argparse
import sys
from collections.abc import Callable, Sequence
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import ValidationError

from plso.apg import DEFAULT_OUTER_ITERS, block_coordinate_fit
from plso.config import (
    DEFAULT_N_SAMPLES,
    RunConfig,
    default_output_dir,
    load_generative_spec,
    load_run_config,
)
from plso.errors import DataError, NumericalError, SchemaVersionError
from plso.io_utils import (
    FittedModelFile,
    Provenance,
    component_frame,
    file_digest,
    phase_frame,
    read_model_file,
    read_observations,
    samples_summary_frame,
    spectrogram_frame,
    write_csv,
    write_json,
    write_model_file,
    write_observations,
)
from plso.kalman import (
    DEFAULT_CI_WIDTH,
    DEFAULT_PHASE_LEVEL,
    DEFAULT_PHASE_MIN_SAMPLES,
    ffbs_sample,
    kalman_smooth,
    phase_estimate,
    reconstruct_component,
)
from plso.logging_utils import _enable_logging, begin_run, get_logger, log_stage
from plso.models import STATIONARY
from plso.oscillator import simulate_generative
from plso.selection import SelectionConfig, select_model
from plso.simulation import (
    CV_MODE,
    DEFAULT_BENCH_CUTOFF_HZ,
    DEFAULT_LAMBDA_MODES,
    ExperimentSpec,
    mode_label,
    run_benchmark,
    simulate_experiment,
)
from plso.whittle import model_psd, periodogram

logger = get_logger(__name__)

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_DATA = 3
EXIT_NUMERICAL = 4


def _int_list(text: str) -> list[int]:
    try:
        return [int(part) for part in text.split(",") if part.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


def _bool_list(text: str) -> list[bool]:
    flags = []
    for part in text.split(","):
        lowered = part.strip().lower()
        if lowered in ("1", "true", "yes"):
            flags.append(True)
        elif lowered in ("0", "false", "no"):
            flags.append(False)
        else:
            raise argparse.ArgumentTypeError(f"expected true/false flags, got {part!r}")
    return flags


def _mode_list(text: str) -> list[float | str]:
    modes: list[float | str] = []
    for part in text.split(","):
        lowered = part.strip().lower()
        if lowered in (CV_MODE, STATIONARY):
            modes.append(lowered)
            continue
        try:
            modes.append(float(lowered))
        except ValueError:
            raise argparse.ArgumentTypeError(
                f"expected a number, '{CV_MODE}' or '{STATIONARY}', got {part!r}"
            ) from None
    return modes


def _output_dir(value: Path | None) -> Path:
    return value if value is not None else default_output_dir()


def cmd_simulate(args: argparse.Namespace) -> list[Path]:
    """Simulate observations and ground truth, echoing the generator in a manifest."""
    out = _output_dir(args.output_dir)
    if args.spec is not None:
        gen_spec = load_generative_spec(args.spec)
        params = gen_spec.to_params()
        observations, latent = simulate_generative(params, gen_spec.to_field(), args.seed)
        truth = latent.real_parts
        manifest: dict[str, Any] = {
            "kind": "generative",
            "sampling_rate": gen_spec.sampling_rate,
            "spec": gen_spec.model_dump(mode="json"),
        }
        delta = gen_spec.delta
    else:
        bundle = simulate_experiment(args.seed)
        observations, truth = bundle.observations, bundle.true_components
        manifest = {
            "kind": "experiment",
            "sampling_rate": bundle.spec.sampling_rate,
            "spec": bundle.spec.model_dump(mode="json"),
        }
        delta = bundle.spec.delta
    manifest.update({"seed": args.seed, "n_samples": int(observations.size)})

    truth_frame = pd.DataFrame(
        {f"component_{j}": truth[:, j] for j in range(truth.shape[1])}
    )
    truth_frame.insert(0, "time_s", [k * delta for k in range(len(truth_frame))])
    truth_frame.insert(0, "k", range(len(truth_frame)))

    paths = [out / "observations.csv", out / "ground_truth.csv", out / "manifest.json"]
    write_observations(paths[0], observations)
    write_csv(paths[1], truth_frame)
    write_json(paths[2], manifest)
    logger.info(f"simulated {observations.size} samples into {out}")
    return paths


def _fit_config(args: argparse.Namespace) -> RunConfig:
    overrides = {
        "input_path": args.input,
        "sampling_rate": args.sampling_rate,
        "window_seconds": args.window_seconds,
        "window_samples": args.window_samples,
        "n_components": args.components,
        "component_candidates": args.candidates,
        "smoothness": args.smoothness,
        "cutoff_hz": args.cutoff_hz,
        "seed": args.seed,
        "output_dir": args.output_dir,
        "outer_iters": args.outer_iters,
        "freeze_center_freqs": args.freeze,
    }
    return load_run_config(args.config, overrides)


def cmd_fit(args: argparse.Namespace) -> list[Path]:
    """Select J and lambda as configured, fit the model and save it."""
    config = _fit_config(args)
    if config.input_path is None:
        raise ValueError("no input file: pass --input or set input_path in the config")
    observations = read_observations(config.input_path)
    window_len = config.window_len
    periodogram(observations, window_len)

    with log_stage(logger, "model selection"):
        report = select_model(
            observations,
            window_len,
            config.selection_config(),
            n_components=config.n_components,
            j_candidates=config.component_candidates,
            smoothness=config.smoothness,
            lambda_grid=config.lambda_grid,
        )
    assert report.chosen_j is not None and report.chosen_lambda is not None
    assert report.init_params is not None and report.init_psi is not None
    params, psi, diagnostics = block_coordinate_fit(
        observations,
        window_len,
        report.chosen_j,
        report.chosen_lambda,
        config.optimizer,
        config.outer_iters,
        delta=config.delta,
        obs_noise_var=report.sigma_nu2,
        init=(report.init_params, report.init_psi),
        frozen=config.freeze_center_freqs,
    )
    model = FittedModelFile(
        params=params,
        psi=psi,
        diagnostics=diagnostics,
        provenance=Provenance(
            input_digest=file_digest(config.input_path),
            seed=config.seed,
            config=config.model_dump(mode="json"),
        ),
    )
    out = config.output_dir
    paths = [out / "model.json", out / "selection.json"]
    write_model_file(paths[0], model)
    write_json(paths[1], report.model_dump(mode="json", exclude={"init_psi"}))
    logger.info(f"fitted J={report.chosen_j}, lambda={report.chosen_lambda}; wrote {out}")
    return paths


def _load_model_and_data(args: argparse.Namespace) -> tuple[FittedModelFile, np.ndarray]:
    model = read_model_file(args.model)
    observations = read_observations(args.input)
    if observations.size != model.psi.n_samples:
        raise DataError(
            f"model covers {model.psi.n_samples} samples "
            f"({model.psi.n_windows} windows of {model.psi.window_len}), "
            f"data has {observations.size}"
        )
    return model, observations


def cmd_decompose(args: argparse.Namespace) -> list[Path]:
    """Write smoothed component trajectories and the model spectrogram."""
    model, observations = _load_model_and_data(args)
    params, psi = model.params, model.psi
    out = _output_dir(args.output_dir)
    post = kalman_smooth(observations, params, psi)

    paths = []
    for j in range(params.n_components):
        path = out / f"component_{j}.csv"
        mean, lower, upper = reconstruct_component(post, j, args.ci_width)
        write_csv(path, component_frame(mean, lower, upper, params.delta))
        paths.append(path)
    path = out / "spectrogram.csv"
    write_csv(path, spectrogram_frame(model_psd(params, psi), params.delta))
    paths.append(path)
    return paths


def cmd_sample(args: argparse.Namespace) -> list[Path]:
    """Draw posterior trajectories and summarize them and their phases."""
    model, observations = _load_model_and_data(args)
    params, psi = model.params, model.psi
    out = _output_dir(args.output_dir)
    n_samples = args.n_samples if args.n_samples is not None else DEFAULT_N_SAMPLES
    seed = args.seed if args.seed is not None else (model.provenance.seed or 0)

    ens = ffbs_sample(observations, params, psi, n_samples, seed)
    paths = [out / "samples_summary.csv"]
    write_csv(paths[0], samples_summary_frame(ens, params.delta))
    if args.write_trajectories:
        for j in range(params.n_components):
            path = out / f"trajectories_{j}.csv"
            frame = pd.DataFrame(
                ens.samples[:, :, 2 * j].T,
                columns=[f"sample_{s}" for s in range(ens.n_samples)],
            )
            frame.insert(0, "k", range(frame.shape[0]))
            write_csv(path, frame)
            paths.append(path)
    if ens.n_samples < args.phase_min_samples:
        logger.warning(
            f"skipping phase estimates: {ens.n_samples} samples are fewer than "
            f"{args.phase_min_samples}"
        )
        return paths
    for j in range(params.n_components):
        path = out / f"phase_{j}.csv"
        phase = phase_estimate(ens, j, args.phase_level, args.phase_min_samples)
        write_csv(path, phase_frame(phase, params.delta))
        paths.append(path)
    return paths


def cmd_bench(args: argparse.Namespace) -> list[Path]:
    """Run the simulation benchmark and write the seed-averaged table."""
    spec = ExperimentSpec()
    seeds = list(range(args.first_seed, args.first_seed + args.realizations))
    cfg = SelectionConfig(
        delta=spec.delta, cutoff_hz=args.cutoff_hz, outer_iters=args.outer_iters
    )
    result = run_benchmark(
        seeds,
        args.modes,
        cfg,
        spec,
        show_progress=not args.no_progress,
        record_runtime=args.record_runtime,
    )
    summary = result.summary()
    out = _output_dir(args.output_dir)
    paths = [out / "bench.csv", out / "bench.json"]
    write_csv(paths[0], summary)
    write_json(
        paths[1],
        {
            "seeds": seeds,
            "lambda_modes": [mode_label(mode) for mode in args.modes],
            "summary": summary.to_dict(orient="records"),
            "results": result.model_dump(mode="json"),
        },
    )
    if result.failures:
        logger.warning(f"{len(result.failures)} seed(s) failed: {sorted(result.failures)}")
    return paths


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="plso",
        description="Piecewise locally stationary oscillator decomposition of time series.",
    )
    parser.add_argument("--log", action="store_true", help="Enable console and file logging")
    parser.add_argument("--verbose", action="store_true", help="Log DEBUG detail to the console")
    sub = parser.add_subparsers(dest="command", required=True)

    simulate = sub.add_parser("simulate", help="Simulate observations with ground truth")
    simulate.add_argument("--seed", type=int, default=0)
    simulate.add_argument("--spec", type=Path, help="GenerativeSpec file (YAML or JSON)")
    simulate.add_argument("--output-dir", type=Path)
    simulate.set_defaults(handler=cmd_simulate)

    fit = sub.add_parser("fit", help="Fit a model to a CSV record")
    fit.add_argument("--config", type=Path, help="RunConfig file (YAML or JSON)")
    fit.add_argument("--input", type=Path)
    fit.add_argument("--sampling-rate", type=float)
    fit.add_argument("--window-seconds", type=float)
    fit.add_argument("--window-samples", type=int)
    fit.add_argument("--components", type=int, help="Fixed number of components J")
    fit.add_argument("--candidates", type=_int_list, help="Comma-separated J values for AIC")
    fit.add_argument("--smoothness", help="lambda value, 'cv' or 'stationary'")
    fit.add_argument("--cutoff-hz", type=float)
    fit.add_argument("--seed", type=int)
    fit.add_argument("--outer-iters", type=int)
    fit.add_argument("--freeze", type=_bool_list, help="Per-component frequency freeze flags")
    fit.add_argument("--output-dir", type=Path)
    fit.set_defaults(handler=cmd_fit)

    decompose = sub.add_parser("decompose", help="Smooth components and export the spectrogram")
    decompose.add_argument("--model", type=Path, required=True)
    decompose.add_argument("--input", type=Path, required=True)
    decompose.add_argument("--ci-width", type=float, default=DEFAULT_CI_WIDTH)
    decompose.add_argument("--output-dir", type=Path)
    decompose.set_defaults(handler=cmd_decompose)

    sample = sub.add_parser("sample", help="Draw posterior samples and phase estimates")
    sample.add_argument("--model", type=Path, required=True)
    sample.add_argument("--input", type=Path, required=True)
    sample.add_argument("--n-samples", type=int)
    sample.add_argument("--seed", type=int)
    sample.add_argument("--phase-level", type=float, default=DEFAULT_PHASE_LEVEL)
    sample.add_argument("--phase-min-samples", type=int, default=DEFAULT_PHASE_MIN_SAMPLES)
    sample.add_argument("--write-trajectories", action="store_true")
    sample.add_argument("--output-dir", type=Path)
    sample.set_defaults(handler=cmd_sample)

    bench = sub.add_parser("bench", help="Run the amplitude-modulation benchmark")
    bench.add_argument("--realizations", type=int, default=20)
    bench.add_argument("--first-seed", type=int, default=0)
    bench.add_argument("--modes", type=_mode_list, default=list(DEFAULT_LAMBDA_MODES))
    bench.add_argument("--cutoff-hz", type=float, default=DEFAULT_BENCH_CUTOFF_HZ)
    bench.add_argument("--outer-iters", type=int, default=DEFAULT_OUTER_ITERS)
    bench.add_argument("--record-runtime", action="store_true")
    bench.add_argument("--no-progress", action="store_true")
    bench.add_argument("--output-dir", type=Path)
    bench.set_defaults(handler=cmd_bench)
    return parser


def _fail(code: int, message: str) -> int:
    logger.error(message)
    print(f"[error] {message}", file=sys.stderr)
    return code


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    begin_run(args.command)
    _enable_logging(args.log, verbose=args.verbose)

    handler: Callable[[argparse.Namespace], list[Path]] = args.handler
    try:
        with log_stage(logger, args.command):
            paths = handler(args)
    except DataError as e:
        return _fail(EXIT_DATA, str(e))
    except SchemaVersionError as e:
        return _fail(EXIT_USAGE, str(e))
    except ValidationError as e:
        return _fail(EXIT_USAGE, f"invalid configuration:\n{e}")
    except NumericalError as e:
        return _fail(EXIT_NUMERICAL, str(e))
    except ValueError as e:
        return _fail(EXIT_USAGE, str(e))
    except OSError as e:
        # unreadable inputs and unwritable output directories are bad path arguments
        message = f"cannot access {e.filename}: {e.strerror}" if e.filename else str(e)
        return _fail(EXIT_USAGE, message)
    for path in paths:
        print(path)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
