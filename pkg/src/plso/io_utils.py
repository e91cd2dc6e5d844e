"""CSV/JSON ingestion and export, and the fitted-model file."""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Any

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field

from plso.apg import FitDiagnostics
from plso.errors import DataError, SchemaVersionError
from plso.kalman import PhaseEstimate, SampleEnsemble
from plso.logging_utils import get_logger
from plso.models import LogVarianceField, ModelParams

logger = get_logger(__name__)

SCHEMA_VERSION = "1.0"
VALUE_COLUMN = "value"
CSV_FLOAT_FORMAT = "%.17g"
_DIGEST_CHUNK_BYTES = 1 << 16


class Provenance(BaseModel):
    """Where a fitted model came from."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    input_digest: str | None = Field(None, description="sha256 of the input CSV")
    seed: int | None = None
    config: dict[str, Any] = Field(default_factory=dict)


class FittedModelFile(BaseModel):
    """Versioned on-disk form of a fitted model."""

    model_config = ConfigDict(extra="forbid")

    schema_version: str = SCHEMA_VERSION
    params: ModelParams
    psi: LogVarianceField
    diagnostics: FitDiagnostics = Field(default_factory=FitDiagnostics)
    provenance: Provenance = Field(default_factory=Provenance)


def file_digest(path: str | Path) -> str:
    hasher = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(_DIGEST_CHUNK_BYTES), b""):
            hasher.update(chunk)
    return hasher.hexdigest()


def _atomic_write_text(path: Path, text: str) -> None:
    """Write to a temporary sibling, then move it over ``path``."""
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp_path = path.with_name(f".{path.name}.tmp")
    try:
        with open(tmp_path, "w", encoding="utf-8", newline="") as f:
            f.write(text)
        tmp_path.replace(path)
    finally:
        if tmp_path.exists():
            tmp_path.unlink()
    logger.debug(f"wrote {path}")


def write_json(path: str | Path, payload: Any) -> None:
    text = json.dumps(payload, indent=2, sort_keys=True, allow_nan=False) + "\n"
    _atomic_write_text(Path(path), text)


def write_csv(path: str | Path, frame: pd.DataFrame) -> None:
    """Write a frame without index, floats at 17 significant digits, LF endings."""
    text = frame.to_csv(index=False, float_format=CSV_FLOAT_FORMAT, lineterminator="\n")
    _atomic_write_text(Path(path), text)


def read_observations(path: str | Path) -> np.ndarray:
    """Read a single-column CSV with header ``value`` into a float64 vector.

    Raises:
        DataError: If the file is empty, has the wrong header, or holds a
            value that is not a finite number (the 1-based file line is
            reported).
    """
    path = Path(path)
    try:
        frame = pd.read_csv(path, dtype=str, keep_default_na=False)
    except pd.errors.EmptyDataError:
        raise DataError(f"{path} is empty; expected a '{VALUE_COLUMN}' header", line=1) from None
    except pd.errors.ParserError as e:
        raise DataError(f"{path} is not a single-column CSV: {e}") from None
    if list(frame.columns) != [VALUE_COLUMN]:
        raise DataError(
            f"expected a single '{VALUE_COLUMN}' column, got {list(frame.columns)}", line=1
        )
    if frame.empty:
        raise DataError(f"{path} holds a header but no samples", line=2)

    raw = frame[VALUE_COLUMN].str.strip()
    checked = pd.to_numeric(raw, errors="coerce").to_numpy(dtype=np.float64)
    bad = np.flatnonzero(~np.isfinite(checked))
    if bad.size:
        idx = int(bad[0])
        raise DataError(f"'{raw.iloc[idx]}' is not a finite number", line=idx + 2)
    # astype parses each string exactly, so %.17g exports read back bit for bit
    values = raw.astype(np.float64).to_numpy()
    logger.info(f"read {values.size} samples from {path}")
    return values


def write_observations(path: str | Path, observations: np.ndarray) -> None:
    write_csv(path, pd.DataFrame({VALUE_COLUMN: np.asarray(observations, dtype=np.float64)}))


def write_model_file(path: str | Path, model: FittedModelFile) -> None:
    write_json(path, model.model_dump(mode="json"))


def _major(version: str) -> str:
    return version.split(".", 1)[0]


def read_model_file(path: str | Path) -> FittedModelFile:
    """Load a fitted model, refusing files of another major schema version.

    Raises:
        DataError: If the file is not valid JSON.
        SchemaVersionError: If the schema version is missing or unsupported.
    """
    try:
        payload = json.loads(Path(path).read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise DataError(f"{path} is not valid JSON: {e.msg}", line=e.lineno) from None
    found = payload.get("schema_version") if isinstance(payload, dict) else None
    if not isinstance(found, str) or _major(found) != _major(SCHEMA_VERSION):
        raise SchemaVersionError(str(found), _major(SCHEMA_VERSION))
    return FittedModelFile.model_validate(payload)


def _time_columns(n_samples: int, delta: float) -> dict[str, np.ndarray]:
    k = np.arange(n_samples)
    return {"k": k, "time_s": k * delta}


def component_frame(
    mean: np.ndarray, lower: np.ndarray, upper: np.ndarray, delta: float
) -> pd.DataFrame:
    return pd.DataFrame(
        {
            **_time_columns(len(mean), delta),
            "mean": mean,
            "ci_lower": lower,
            "ci_upper": upper,
        }
    )


def spectrogram_frame(psd_matrix: np.ndarray, delta: float) -> pd.DataFrame:
    """Rows are windows, columns are DFT grid frequencies in Hz, values in dB."""
    n_windows, window_len = psd_matrix.shape
    freqs_hz = np.arange(window_len) / (window_len * delta)
    frame = pd.DataFrame(
        10.0 * np.log10(psd_matrix), columns=[f"{f:.17g}" for f in freqs_hz]
    )
    frame.insert(0, "window", np.arange(n_windows))
    return frame


def samples_summary_frame(ens: SampleEnsemble, delta: float) -> pd.DataFrame:
    """Per-sample ensemble mean and variance of every state coordinate."""
    means = ens.samples.mean(axis=0)
    variances = ens.samples.var(axis=0)
    columns: dict[str, np.ndarray] = _time_columns(means.shape[0], delta)
    for j in range(means.shape[1] // 2):
        for offset, part in enumerate(("re", "im")):
            columns[f"mean_{part}_{j}"] = means[:, 2 * j + offset]
            columns[f"var_{part}_{j}"] = variances[:, 2 * j + offset]
    return pd.DataFrame(columns)


def phase_frame(phase: PhaseEstimate, delta: float) -> pd.DataFrame:
    return pd.DataFrame(
        {
            **_time_columns(phase.mean_phase.shape[0], delta),
            "mean": phase.mean_phase,
            "lower": phase.lower,
            "upper": phase.upper,
            "degenerate": phase.degenerate,
        }
    )


def read_csv_frame(path: str | Path) -> pd.DataFrame:
    """Read back one of the CSV exports with full float precision."""
    return pd.read_csv(path, float_precision="round_trip")


def db_to_power(values: np.ndarray) -> np.ndarray:
    return np.power(10.0, np.asarray(values, dtype=np.float64) / 10.0)
