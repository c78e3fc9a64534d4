import logging
import os

import pytest

from flowforge.core import config as config_module
from flowforge.core.config import DEFAULT_HYPERPARAMS_PATH, Settings
from flowforge.core.exceptions import (
    EXIT_EVALUATOR_ERROR,
    EXIT_INPUT_ERROR,
    AllCandidatesFailedError,
    AppException,
    EvaluatorUnavailableError,
    InvalidRangeError,
    MissingFileError,
)
from flowforge.core.log_setup import configure_logging


# --- Settings ---

def test_settings_defaults(mocker):
    mocker.patch.dict(os.environ, {}, clear=True)
    s = Settings(_env_file=None)
    assert s.LOG_LEVEL == "INFO"
    assert s.DEFAULT_WORKERS == 1
    assert s.DEFAULT_RESOLUTION == (1280, 720)
    assert s.EVALUATOR_TIMEOUT_S is None
    assert s.EVALUATOR_LAUNCH_RETRIES == 3


def test_settings_read_prefixed_environment(mocker):
    mocker.patch.dict(os.environ, {"FLOWFORGE_LOG_LEVEL": "DEBUG", "FLOWFORGE_DEFAULT_WORKERS": "4"})
    s = Settings(_env_file=None)
    assert s.LOG_LEVEL == "DEBUG"
    assert s.DEFAULT_WORKERS == 4


def test_config_path_precedence(mocker, tmp_path):
    mocker.patch.dict(os.environ, {"FLOWFORGE_CONFIG": str(tmp_path / "env.json")})
    s = Settings(_env_file=None)
    assert s.resolve_config_path(str(tmp_path / "flag.json")) == tmp_path / "flag.json"
    assert s.resolve_config_path(None) == tmp_path / "env.json"
    mocker.patch.dict(os.environ, {}, clear=True)
    assert Settings(_env_file=None).resolve_config_path(None) == DEFAULT_HYPERPARAMS_PATH


def test_shipped_defaults_exist():
    assert DEFAULT_HYPERPARAMS_PATH.is_file()


def test_get_settings_is_cached():
    assert config_module.get_settings() is config_module.get_settings()


# --- Exceptions ---

def test_exceptions_carry_codes():
    e = InvalidRangeError("lo > hi")
    assert isinstance(e, AppException)
    assert e.detail == "lo > hi"
    assert e.error_code == "INVALID_RANGE"
    assert e.exit_code == EXIT_INPUT_ERROR
    assert str(e) == "lo > hi"


def test_evaluator_errors_exit_with_two():
    assert AllCandidatesFailedError().exit_code == EXIT_EVALUATOR_ERROR
    assert EvaluatorUnavailableError().exit_code == EXIT_EVALUATOR_ERROR
    assert MissingFileError().exit_code == EXIT_INPUT_ERROR


# --- Logging ---

def test_configure_logging_sets_root_level():
    configure_logging("debug")
    assert logging.getLogger().level == logging.DEBUG
    assert logging.getLogger("numba").level == logging.WARNING
    configure_logging("WARNING")
    assert logging.getLogger().level == logging.WARNING
