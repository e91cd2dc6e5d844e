"""Package logging: every record carries the id of its run and the pipeline stage it came from.

A run is one CLI command or one library entry point; :func:`begin_run` starts a
new one. :func:`log_stage` opens a named stage, and stages nest, so a record
logged during AIC selection inside ``plso fit`` is stamped
``stage=fit/model selection/AIC for J=2``. Handlers are only attached on
request.
"""

import contextvars
import logging
import os
import time
import uuid
from collections.abc import Callable, Iterator
from contextlib import contextmanager
from datetime import datetime, timezone
from logging.handlers import RotatingFileHandler
from pathlib import Path

from pydantic import BaseModel, ConfigDict, Field

logger = logging.getLogger(__name__)

PACKAGE_LOGGER_NAME = "plso"
ENV_LOG_PATH = "PLSO_LOG_PATH"
DEFAULT_LOG_DIR = "~/.plso"
DEFAULT_LOG_FILENAME = "plso.log"
DEFAULT_LOG_MAX_BYTES = 10 * 1024 * 1024
DEFAULT_LOG_BACKUP_COUNT = 5
NO_STAGE = "-"

_PKG_LOGGER = logging.getLogger(PACKAGE_LOGGER_NAME)
_RECORD_PREFIX = "%(asctime)s [%(levelname)s] [run=%(run_id)s stage=%(stage)s]"
_CONSOLE_FORMAT = f"{_RECORD_PREFIX} %(name)s: %(message)s"
_FILE_FORMAT = f"{_RECORD_PREFIX} %(name)s:%(funcName)s:%(lineno)d: %(message)s"


def _new_run_id() -> str:
    stamp = datetime.now(timezone.utc).strftime("%Y%m%dT%H%M%SZ")
    return f"{stamp}-pid{os.getpid()}-{uuid.uuid4().hex[:8]}"


class RunContext(BaseModel):
    """Identity of the current run and the stack of stages open inside it."""

    model_config = ConfigDict(frozen=True, extra="forbid")

    run_id: str = Field(default_factory=_new_run_id)
    command: str | None = None
    stages: tuple[str, ...] = ()

    @property
    def stage(self) -> str:
        return "/".join(self.stages) or NO_STAGE

    def enter(self, stage: str) -> "RunContext":
        return self.model_copy(update={"stages": (*self.stages, stage)})


_CURRENT_RUN: contextvars.ContextVar[RunContext] = contextvars.ContextVar(
    "plso_run", default=RunContext()
)


def current_run() -> RunContext:
    return _CURRENT_RUN.get()


def begin_run(command: str | None = None) -> RunContext:
    """Give the records logged from here on a fresh run id."""
    run = RunContext(command=command)
    _CURRENT_RUN.set(run)
    return run


class _RunStageFilter(logging.Filter):
    def filter(self, record: logging.LogRecord) -> bool:
        run = _CURRENT_RUN.get()
        record.run_id = run.run_id
        record.stage = run.stage
        return True


def get_logger(name: str) -> logging.Logger:
    return logging.getLogger(name)


def configure_package_logging() -> None:
    if not any(
        isinstance(handler, logging.NullHandler) for handler in _PKG_LOGGER.handlers
    ):
        _PKG_LOGGER.addHandler(logging.NullHandler())


def _resolve_log_path() -> Path:
    """
    Resolve where the rotating log file is written.

    PLSO_LOG_PATH without a suffix (or ending in a slash) names a directory that
    receives DEFAULT_LOG_FILENAME; any other value is the log file itself.
    Without the variable the log goes to ~/.plso/plso.log.
    """
    raw = os.getenv(ENV_LOG_PATH)
    if not raw:
        return Path(DEFAULT_LOG_DIR).expanduser() / DEFAULT_LOG_FILENAME

    path = Path(raw).expanduser()
    if path.suffix == "" or raw.endswith("/"):
        return path / DEFAULT_LOG_FILENAME
    return path


def _installed(match: Callable[[logging.Handler], bool]) -> logging.Handler | None:
    return next((h for h in _PKG_LOGGER.handlers if match(h)), None)


def _stamped(handler: logging.Handler, fmt: str, level: int) -> logging.Handler:
    handler.setFormatter(logging.Formatter(fmt))
    handler.addFilter(_RunStageFilter())
    handler.setLevel(level)
    return handler


def _enable_logging(enable_logging: bool, *, verbose: bool = False) -> Path | None:
    """Send package records to the console and to a rotating log file.

    The file always receives DEBUG detail such as per-iteration optimizer
    output; the console shows INFO unless ``verbose`` is set. Calling this
    again reuses the installed handlers and only adjusts the console level.

    Returns:
        The log file path, or None when ``enable_logging`` is False.
    """
    if not enable_logging:
        return None

    log_path = _resolve_log_path()
    log_path.parent.mkdir(parents=True, exist_ok=True)
    console_level = logging.DEBUG if verbose else logging.INFO

    console = _installed(lambda h: type(h) is logging.StreamHandler)
    if console is None:
        _PKG_LOGGER.addHandler(
            _stamped(logging.StreamHandler(), _CONSOLE_FORMAT, console_level)
        )
    else:
        console.setLevel(console_level)

    same_file = _installed(
        lambda h: isinstance(h, logging.FileHandler) and Path(h.baseFilename) == log_path
    )
    if same_file is None:
        rotating = RotatingFileHandler(
            log_path,
            maxBytes=DEFAULT_LOG_MAX_BYTES,
            backupCount=DEFAULT_LOG_BACKUP_COUNT,
            encoding="utf-8",
        )
        _PKG_LOGGER.addHandler(_stamped(rotating, _FILE_FORMAT, logging.DEBUG))

    _PKG_LOGGER.setLevel(logging.DEBUG)
    logger.debug(
        f"logging to `{log_path}` (console level {logging.getLevelName(console_level)})"
    )
    return log_path


@contextmanager
def log_stage(stage_logger: logging.Logger, stage: str) -> Iterator[RunContext]:
    """Open a named stage of the current run and log its wall-clock duration.

    Records logged inside carry the stage, nested under any stage already open.
    """
    token = _CURRENT_RUN.set(_CURRENT_RUN.get().enter(stage))
    stage_logger.info(f"{stage}: started")
    start = time.perf_counter()
    try:
        yield _CURRENT_RUN.get()
    except BaseException:
        stage_logger.warning(f"{stage}: failed after {time.perf_counter() - start:.2f}s")
        raise
    else:
        stage_logger.info(f"{stage}: finished in {time.perf_counter() - start:.2f}s")
    finally:
        _CURRENT_RUN.reset(token)


configure_package_logging()
