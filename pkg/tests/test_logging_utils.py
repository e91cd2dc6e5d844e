import logging
import os
import tempfile
from pathlib import Path
from unittest.mock import patch

import pytest

from plso.logging_utils import (
    DEFAULT_LOG_FILENAME,
    ENV_LOG_PATH,
    NO_STAGE,
    PACKAGE_LOGGER_NAME,
    _enable_logging,
    _resolve_log_path,
    begin_run,
    current_run,
    log_stage,
)


def test_resolve_log_path_no_env_var():
    with patch.dict(os.environ, {}, clear=False):
        os.environ.pop(ENV_LOG_PATH, None)

        result = _resolve_log_path()
        expected = Path("~/.plso").expanduser() / DEFAULT_LOG_FILENAME
        assert result == expected


def test_resolve_log_path_env_var_as_directory():
    with tempfile.TemporaryDirectory() as tmpdir:
        with patch.dict(os.environ, {ENV_LOG_PATH: tmpdir}):
            result = _resolve_log_path()
            expected = Path(tmpdir) / DEFAULT_LOG_FILENAME
            assert result == expected


def test_resolve_log_path_env_var_as_file(tmp_path: Path):
    log_file = tmp_path / "runs" / "fit.log"
    with patch.dict(os.environ, {ENV_LOG_PATH: str(log_file)}):
        assert _resolve_log_path() == log_file


def test_enable_logging_writes_rotating_file(tmp_path: Path):
    pkg_logger = logging.getLogger(PACKAGE_LOGGER_NAME)
    before = list(pkg_logger.handlers)
    try:
        with patch.dict(os.environ, {ENV_LOG_PATH: str(tmp_path)}):
            assert _enable_logging(True) == tmp_path / DEFAULT_LOG_FILENAME
            _enable_logging(True)
            run = begin_run("fit")
            with log_stage(logging.getLogger("plso.cli"), "fit"):
                with log_stage(logging.getLogger("plso.apg"), "apg"):
                    logging.getLogger("plso.apg").debug("iteration 1: h=3.5")
        added = [h for h in pkg_logger.handlers if h not in before]
        file_handlers = [h for h in added if isinstance(h, logging.FileHandler)]
        assert len(file_handlers) == 1
        file_handlers[0].flush()
        text = (tmp_path / DEFAULT_LOG_FILENAME).read_text(encoding="utf-8")
        line = next(row for row in text.splitlines() if "iteration 1: h=3.5" in row)
        assert f"[run={run.run_id} stage=fit/apg]" in line
    finally:
        for handler in pkg_logger.handlers[:]:
            if handler not in before:
                pkg_logger.removeHandler(handler)
                handler.close()


def test_enable_logging_false_is_a_no_op(tmp_path: Path):
    pkg_logger = logging.getLogger(PACKAGE_LOGGER_NAME)
    before = list(pkg_logger.handlers)
    with patch.dict(os.environ, {ENV_LOG_PATH: str(tmp_path)}):
        _enable_logging(False)
    assert pkg_logger.handlers == before
    assert not (tmp_path / DEFAULT_LOG_FILENAME).exists()


def test_log_stage_reports_start_and_finish(caplog: pytest.LogCaptureFixture):
    stage_logger = logging.getLogger("plso.tests")
    with caplog.at_level(logging.INFO, logger="plso.tests"):
        with log_stage(stage_logger, "kalman smoothing"):
            pass
    messages = [record.getMessage() for record in caplog.records]
    assert messages[0] == "kalman smoothing: started"
    assert messages[1].startswith("kalman smoothing: finished in ")


def test_log_stage_nests_and_restores_the_stage():
    stage_logger = logging.getLogger("plso.tests")
    begin_run("decompose")
    assert current_run().stage == NO_STAGE
    with log_stage(stage_logger, "decompose") as outer:
        assert outer.stage == "decompose"
        with log_stage(stage_logger, "smoothing"):
            assert current_run().stage == "decompose/smoothing"
        assert current_run().stage == "decompose"
    assert current_run().stage == NO_STAGE
    assert current_run().command == "decompose"


def test_log_stage_reports_failures(caplog: pytest.LogCaptureFixture):
    stage_logger = logging.getLogger("plso.tests")
    with caplog.at_level(logging.INFO, logger="plso.tests"):
        with pytest.raises(RuntimeError):
            with log_stage(stage_logger, "sampling"):
                raise RuntimeError("boom")
    assert caplog.records[-1].levelno == logging.WARNING
    assert caplog.records[-1].getMessage().startswith("sampling: failed after ")
    assert current_run().stage == NO_STAGE


def test_each_run_gets_its_own_id():
    first = begin_run("simulate")
    second = begin_run("simulate")
    assert first.run_id != second.run_id
    assert current_run() == second
