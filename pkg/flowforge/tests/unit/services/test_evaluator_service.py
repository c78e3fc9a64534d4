import math
import stat
import subprocess

import pytest

from flowforge.core.exceptions import EvaluatorUnavailableError, InvalidConfigError
from flowforge.models.dataset_models import Histogram
from flowforge.models.hyperparams import HyperParams
from flowforge.models.search_models import Candidate, EvaluatorConfig
from flowforge.services import evaluator_service
from flowforge.services.augment_service import augment_sample
from flowforge.services.dataset_service import generate_dataset
from flowforge.services.evaluator_service import (
    CANDIDATE_CONFIG_NAME,
    Evaluator,
    ExternalCommandEvaluator,
    HistogramEvaluator,
    build_evaluator,
    histogram_score,
    parse_score,
    parse_target,
)
from flowforge.services.hyper_service import load_hyperparams
from flowforge.services.scene_service import render_index, sample_seed
from flowforge.services.stats_service import motion_histogram


@pytest.fixture
def candidate():
    return Candidate(vector=[0.5], hyperparams=HyperParams())


@pytest.fixture
def no_sleep(mocker):
    return mocker.patch("time.sleep")


@pytest.fixture
def mock_run(mocker):
    return mocker.patch("flowforge.services.evaluator_service.subprocess.run")


def _completed(stdout="", returncode=0, stderr=""):
    return subprocess.CompletedProcess(args=[], returncode=returncode, stdout=stdout, stderr=stderr)


# --- Tests for parse_score ---

@pytest.mark.parametrize("stdout, expected", [
    ("0.5\n", 0.5),
    ("epoch 1 loss 3.2\nfinal\n  1.25  \n\n", 1.25),
    ("1e-3", 1e-3),
    ("inf\n", math.inf),
])
def test_parse_score(stdout, expected):
    assert parse_score(stdout) == expected


@pytest.mark.parametrize("stdout", ["", "\n\n", "score: 0.5", "nan"])
def test_parse_score_rejects(stdout):
    assert parse_score(stdout) is None


# --- Tests for ExternalCommandEvaluator ---

def test_external_evaluator_reads_last_line(tmp_path, candidate, mock_run):
    mock_run.return_value = _completed("training...\n0.42\n")
    evaluator = ExternalCommandEvaluator("trainer --epochs 2", timeout_s=30)
    assert evaluator.evaluate(candidate, tmp_path) == 0.42
    args, kwargs = mock_run.call_args
    config_path = tmp_path / CANDIDATE_CONFIG_NAME
    assert args[0] == ["trainer", "--epochs", "2", str(config_path)]
    assert kwargs["timeout"] == 30
    assert load_hyperparams(config_path) == candidate.hyperparams


@pytest.mark.parametrize("result", [_completed("0.4", returncode=1, stderr="boom"), _completed("no score here")])
def test_external_failures_score_inf(tmp_path, candidate, mock_run, result):
    mock_run.return_value = result
    assert ExternalCommandEvaluator("trainer").evaluate(candidate, tmp_path) == math.inf


def test_timeout_scores_inf(tmp_path, candidate, mock_run, caplog):
    mock_run.side_effect = subprocess.TimeoutExpired(cmd="trainer", timeout=1)
    assert ExternalCommandEvaluator("trainer", timeout_s=1).evaluate(candidate, tmp_path) == math.inf
    assert "timed out" in caplog.text


def test_launch_retried_then_unavailable(tmp_path, candidate, mock_run, no_sleep):
    mock_run.side_effect = OSError("exec format error")
    with pytest.raises(EvaluatorUnavailableError):
        ExternalCommandEvaluator("trainer").evaluate(candidate, tmp_path)
    assert mock_run.call_count == 3


def test_transient_launch_failure_recovers(tmp_path, candidate, mock_run, no_sleep):
    mock_run.side_effect = [OSError("resource temporarily unavailable"), _completed("0.1")]
    assert ExternalCommandEvaluator("trainer").evaluate(candidate, tmp_path) == 0.1
    assert mock_run.call_count == 2


def test_empty_command_rejected():
    with pytest.raises(InvalidConfigError):
        ExternalCommandEvaluator("   ")


def test_check_requires_executable(tmp_path):
    with pytest.raises(EvaluatorUnavailableError):
        ExternalCommandEvaluator(str(tmp_path / "no-such-trainer")).check()


def test_real_script(tmp_path, candidate):
    script = tmp_path / "trainer.sh"
    script.write_text('#!/bin/sh\ntest -f "$1" || exit 3\necho "validating $1"\necho 0.75\n')
    script.chmod(script.stat().st_mode | stat.S_IXUSR)
    evaluator = ExternalCommandEvaluator(str(script))
    evaluator.check()
    assert isinstance(evaluator, Evaluator)
    scratch = tmp_path / "scratch"
    scratch.mkdir()
    assert evaluator.evaluate(candidate, scratch) == 0.75


# --- Tests for the histogram proxy ---

def test_histogram_score_is_zero_against_own_renders(small_hyperparams, pool):
    flows = [
        augment_sample(render_index(small_hyperparams, pool, 3, i), small_hyperparams.augment, sample_seed(3, i).child("augment")).flow
        for i in range(2)
    ]
    assert histogram_score(small_hyperparams, motion_histogram(flows), 2, pool, 3) == pytest.approx(0.0, abs=1e-12)


def test_histogram_score_is_bounded(small_hyperparams, pool):
    target = motion_histogram([render_index(small_hyperparams, pool, 0, 0).flow])
    score = histogram_score(small_hyperparams, target, 1, pool, 9)
    assert 0.0 <= score <= 2.0


def test_histogram_budget_must_be_positive(small_hyperparams, pool):
    target = motion_histogram([render_index(small_hyperparams, pool, 0, 0).flow])
    with pytest.raises(InvalidConfigError):
        histogram_score(small_hyperparams, target, 0, pool, 0)
    with pytest.raises(InvalidConfigError):
        HistogramEvaluator(target, 0, pool)


def test_histogram_evaluator_renders_at_override_resolution(tmp_path, small_hyperparams, pool, mocker):
    target = motion_histogram([render_index(small_hyperparams, pool, 0, 0).flow])
    spy = mocker.spy(evaluator_service, "histogram_score")
    evaluator = HistogramEvaluator(target, 1, pool, root_seed=4, resolution=(16, 12))
    score = evaluator.evaluate(Candidate(vector=[], hyperparams=small_hyperparams), tmp_path)
    assert 0.0 <= score <= 2.0
    assert tuple(spy.call_args.args[0].resolution) == (16, 12)


# --- Tests for configuration ---

def test_parse_target():
    ext = parse_target("cmd: python train.py --quick")
    assert (ext.kind, ext.command) == ("external", "python train.py --quick")
    hist = parse_target("/data/sintel/flow")
    assert (hist.kind, hist.target_dir) == ("histogram", "/data/sintel/flow")


def test_build_evaluator_checks_inputs(tmp_path, pool):
    with pytest.raises(InvalidConfigError):
        build_evaluator(EvaluatorConfig(kind="external"), None, 1)
    with pytest.raises(InvalidConfigError):
        build_evaluator(EvaluatorConfig(kind="histogram"), pool, 1)
    with pytest.raises(InvalidConfigError):
        build_evaluator(EvaluatorConfig(kind="histogram", target_dir=str(tmp_path)), None, 1)
    with pytest.raises(EvaluatorUnavailableError):
        build_evaluator(EvaluatorConfig(kind="external", command=str(tmp_path / "missing")), None, 1)


def test_build_histogram_evaluator_from_flo_files(tmp_path, small_hyperparams, pool):
    generate_dataset(small_hyperparams, pool, tmp_path / "target", 1, root_seed=0)
    evaluator = build_evaluator(EvaluatorConfig(kind="histogram", target_dir=str(tmp_path / "target")), pool, 2)
    assert isinstance(evaluator, HistogramEvaluator)
    assert evaluator.budget == 2
    assert sum(evaluator.target.masses) == pytest.approx(1.0)


def test_disjoint_support_scores_two(small_hyperparams, pool):
    edges = motion_histogram([render_index(small_hyperparams, pool, 0, 0).flow]).edges
    far = Histogram(edges=edges, masses=[0.0] * (len(edges) - 2) + [1.0])
    assert histogram_score(small_hyperparams, far, 2, pool, 0) == pytest.approx(2.0)
