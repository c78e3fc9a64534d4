import logging
import math
import shlex
import shutil
import subprocess
from pathlib import Path
from typing import List, Optional, Protocol, Tuple, Union, runtime_checkable

from tenacity import retry, retry_if_exception_type, stop_after_attempt, wait_random_exponential

from flowforge.core.config import settings
from flowforge.core.exceptions import EvaluatorUnavailableError, InvalidConfigError
from flowforge.models.dataset_models import Histogram
from flowforge.models.hyperparams import HyperParams
from flowforge.models.search_models import Candidate, EvaluatorConfig
from flowforge.services.augment_service import augment_sample
from flowforge.services.dataset_service import load_flo_directory
from flowforge.services.hyper_service import save_hyperparams
from flowforge.services.scene_service import AppearancePool, render_index, sample_seed
from flowforge.services.stats_service import l1_distance, motion_histogram

logger = logging.getLogger(__name__)

CANDIDATE_CONFIG_NAME = "hyperparams.json"
COMMAND_PREFIX = "cmd:"


@runtime_checkable
class Evaluator(Protocol):
    """Scores one candidate; lower is better, +inf marks a failed evaluation."""

    def evaluate(self, candidate: Candidate, scratch_dir: Path) -> float: ...

    def check(self) -> None: ...


def candidate_config_path(candidate: Candidate, scratch_dir: Path) -> Path:
    path = Path(scratch_dir) / CANDIDATE_CONFIG_NAME
    if not path.is_file():
        save_hyperparams(candidate.hyperparams, path)
    return path


def parse_score(stdout: str) -> Optional[float]:
    """Last non-empty line of the evaluator output as a float, or None."""
    lines = [ln.strip() for ln in stdout.splitlines() if ln.strip()]
    if not lines:
        return None
    try:
        score = float(lines[-1])
    except ValueError:
        return None
    return None if math.isnan(score) else score


# --- External command ---

def _launch_retry():
    return retry(
        wait=wait_random_exponential(multiplier=0.5, max=10),
        stop=stop_after_attempt(settings.EVALUATOR_LAUNCH_RETRIES),
        retry=retry_if_exception_type(OSError),
        reraise=True,
    )


class ExternalCommandEvaluator:
    """Runs `command <config path>` per candidate and reads the score from its last stdout line."""

    def __init__(self, command: str, timeout_s: Optional[float] = None):
        self.args: List[str] = shlex.split(command)
        if not self.args:
            raise InvalidConfigError("External evaluator command is empty")
        self.timeout_s = timeout_s if timeout_s is not None else settings.EVALUATOR_TIMEOUT_S
        self._run = _launch_retry()(self._launch)

    def _launch(self, config_path: Path) -> subprocess.CompletedProcess:
        return subprocess.run(
            [*self.args, str(config_path)],
            capture_output=True,
            text=True,
            timeout=self.timeout_s,
            check=False,
        )

    def check(self) -> None:
        if shutil.which(self.args[0]) is None and not Path(self.args[0]).is_file():
            raise EvaluatorUnavailableError(f"Evaluator command not found: {self.args[0]}")

    def evaluate(self, candidate: Candidate, scratch_dir: Path) -> float:
        config_path = candidate_config_path(candidate, scratch_dir)
        try:
            proc = self._run(config_path)
        except subprocess.TimeoutExpired:
            logger.warning(f"Evaluator timed out after {self.timeout_s}s on {config_path}")
            return math.inf
        except OSError as e:
            raise EvaluatorUnavailableError(f"Could not launch evaluator {self.args[0]}: {e}") from e
        if proc.returncode != 0:
            logger.warning(f"Evaluator exited with {proc.returncode} on {config_path}: {proc.stderr.strip()[-500:]}")
            return math.inf
        score = parse_score(proc.stdout)
        if score is None:
            logger.warning(f"Evaluator printed no parseable score for {config_path}")
            return math.inf
        return score


# --- Histogram proxy ---

def histogram_score(
    h: HyperParams,
    target: Histogram,
    budget: int,
    pool: AppearancePool,
    root_seed: int,
) -> float:
    """L1 distance in [0, 2] between the motion histogram of `budget` augmented renders and the target."""
    if budget < 1:
        raise InvalidConfigError(f"Evaluation budget must be >= 1, got {budget}")
    flows = (
        augment_sample(render_index(h, pool, root_seed, i), h.augment, sample_seed(root_seed, i).child("augment")).flow
        for i in range(budget)
    )
    return l1_distance(motion_histogram(flows), target)


class HistogramEvaluator:
    """Desk-scale proxy objective: renders with a fixed seed so candidates differ only by their parameters."""

    def __init__(
        self,
        target: Histogram,
        budget: int,
        pool: AppearancePool,
        root_seed: int = 0,
        resolution: Optional[Tuple[int, int]] = None,
    ):
        if budget < 1:
            raise InvalidConfigError(f"Evaluation budget must be >= 1, got {budget}")
        self.target = target
        self.budget = budget
        self.pool = pool
        self.root_seed = root_seed
        self.resolution = resolution

    def check(self) -> None:
        return None

    def evaluate(self, candidate: Candidate, scratch_dir: Path) -> float:
        h = candidate.hyperparams
        if self.resolution is not None:
            h = h.model_copy(update={"resolution": tuple(self.resolution)})
        return histogram_score(h, self.target, self.budget, self.pool, self.root_seed)


def target_histogram(flo_dir: Union[str, Path]) -> Histogram:
    return motion_histogram(load_flo_directory(flo_dir))


def parse_target(target: str) -> EvaluatorConfig:
    """`cmd:<command line>` selects the external evaluator, anything else is a .flo directory."""
    if target.startswith(COMMAND_PREFIX):
        return EvaluatorConfig(kind="external", command=target[len(COMMAND_PREFIX):].strip())
    return EvaluatorConfig(kind="histogram", target_dir=target)


def build_evaluator(cfg: EvaluatorConfig, pool: Optional[AppearancePool], budget: int) -> Evaluator:
    if cfg.kind == "external":
        if not cfg.command:
            raise InvalidConfigError("External evaluator needs a command")
        evaluator = ExternalCommandEvaluator(cfg.command, cfg.timeout_s)
    else:
        if not cfg.target_dir:
            raise InvalidConfigError("Histogram evaluator needs a target .flo directory")
        if pool is None:
            raise InvalidConfigError("Histogram evaluator needs an appearance pool")
        evaluator = HistogramEvaluator(target_histogram(cfg.target_dir), budget, pool, cfg.root_seed, cfg.resolution)
    evaluator.check()
    logger.info(f"Using {type(evaluator).__name__}")
    return evaluator
