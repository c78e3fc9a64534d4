"""Hyperparameter search: CMA-ES over one subgroup of coordinates per iteration.

Each iteration takes the next subgroup from the schedule, runs a few CMA-ES
generations on those coordinates around the incumbent and replaces the
incumbent only when the iteration found a strictly better score. Every
evaluation and generation is appended to `history.jsonl`, which also drives
`resume`: candidates are regenerated from their seeds and recorded scores are
fed back through `cma_tell` instead of re-running the evaluator.
"""
import logging
import math
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path
from typing import Annotated, Dict, List, Optional, Set, Tuple, Union

import numpy as np
from pydantic import BaseModel, Field, TypeAdapter, ValidationError

from flowforge.core.exceptions import EvaluatorUnavailableError, InvalidConfigError
from flowforge.core.rng import SeedPath
from flowforge.models.hyperparams import HyperParams, SearchSpace
from flowforge.models.search_models import (
    Candidate,
    EvaluationRecord,
    GenerationRecord,
    HistoryRecord,
    IncumbentRecord,
    SearchConfig,
    SearchResult,
)
from flowforge.services.cma_service import cma_ask, cma_init, cma_tell
from flowforge.services.evaluator_service import CANDIDATE_CONFIG_NAME, Evaluator
from flowforge.services.hyper_service import decode, encode, save_hyperparams, subgroup_indices, validate

logger = logging.getLogger(__name__)

HISTORY_NAME = "history.jsonl"
BEST_NAME = "best_hyperparams.json"
CANDIDATES_DIR = "candidates"
VECTOR_TOL = 1e-9

_record_adapter = TypeAdapter(Annotated[HistoryRecord, Field(discriminator="kind")])

GenerationKey = Tuple[int, int]


class HistoryReplay(BaseModel):
    """What a previous run already decided."""
    initial: Optional[IncumbentRecord] = None
    incumbent_iterations: Set[int] = Field(default_factory=set)
    completed: Set[GenerationKey] = Field(default_factory=set)
    evaluations: Dict[Tuple[int, int, int], EvaluationRecord] = Field(default_factory=dict)


class SearchHistory:
    """Append-only JSON-lines log of evaluations, generations and incumbents."""

    def __init__(self, path: Union[str, Path]):
        self.path = Path(path)

    def append(self, record: HistoryRecord) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        with self.path.open("a", encoding="utf-8") as f:
            f.write(record.model_dump_json() + "\n")
            f.flush()

    def reset(self) -> None:
        if self.path.exists():
            self.path.unlink()

    def drop_partial_tail(self) -> None:
        """Cut a torn last line so the next append starts on a fresh line."""
        if not self.path.is_file():
            return
        data = self.path.read_bytes()
        if not data or data.endswith(b"\n"):
            return
        keep = data.rfind(b"\n") + 1
        logger.warning(f"Dropping {len(data) - keep} bytes of an interrupted write at the end of {self.path}")
        with self.path.open("r+b") as f:
            f.truncate(keep)

    def records(self) -> List[HistoryRecord]:
        if not self.path.is_file():
            return []
        out = []
        for n, line in enumerate(self.path.read_text(encoding="utf-8").splitlines(), start=1):
            if not line.strip():
                continue
            try:
                out.append(_record_adapter.validate_json(line))
            except ValidationError as e:
                # A crash can leave a partial last line
                logger.warning(f"Skipping unreadable history line {n} in {self.path}: {e.errors()[0]['msg']}")
        return out

    def replay(self) -> HistoryReplay:
        replay = HistoryReplay()
        for record in self.records():
            if isinstance(record, EvaluationRecord):
                replay.evaluations[(record.iteration, record.generation, record.candidate_index)] = record
            elif isinstance(record, GenerationRecord):
                replay.completed.add((record.iteration, record.generation))
            elif record.iteration < 0:
                replay.initial = record
            else:
                replay.incumbent_iterations.add(record.iteration)
        return replay


def check_search_config(cfg: SearchConfig) -> None:
    if cfg.iterations < 1:
        raise InvalidConfigError(f"iterations must be >= 1, got {cfg.iterations}")
    if cfg.population < 2:
        raise InvalidConfigError(f"population must be >= 2, got {cfg.population}")
    if not cfg.sigma0 > 0:
        raise InvalidConfigError(f"sigma0 must be > 0, got {cfg.sigma0}")
    if cfg.generations_per_iteration < 1:
        raise InvalidConfigError(f"generations_per_iteration must be >= 1, got {cfg.generations_per_iteration}")
    if not cfg.subgroup_schedule:
        raise InvalidConfigError("subgroup_schedule must not be empty")
    if cfg.max_workers is not None and cfg.max_workers < 1:
        raise InvalidConfigError(f"max_workers must be >= 1, got {cfg.max_workers}")


def generation_seed(root_seed: int, iteration: int, generation: int) -> SeedPath:
    return SeedPath(root_seed=root_seed, path=(("search", iteration), ("generation", generation)))


def evaluate_candidate(
    evaluator: Evaluator,
    vector: np.ndarray,
    space: SearchSpace,
    base: HyperParams,
    scratch_dir: Path,
) -> Tuple[float, float]:
    """(score, wall time); invalid parameters and evaluator errors score +inf."""
    h = decode(vector, space, base=base)
    scratch_dir.mkdir(parents=True, exist_ok=True)
    save_hyperparams(h, scratch_dir / CANDIDATE_CONFIG_NAME)
    issues = validate(h, space)
    if issues:
        logger.warning(f"Candidate {scratch_dir.name} is invalid: {'; '.join(str(i) for i in issues)}")
        return math.inf, 0.0
    start = time.perf_counter()
    try:
        score = float(evaluator.evaluate(Candidate(vector=vector.tolist(), hyperparams=h), scratch_dir))
    except EvaluatorUnavailableError:
        raise
    except Exception as e:
        logger.warning(f"Evaluation of {scratch_dir.name} failed: {e}", exc_info=True)
        score = math.inf
    if math.isnan(score):
        score = math.inf
    return score, time.perf_counter() - start


def run_search(
    cfg: SearchConfig,
    space: SearchSpace,
    incumbent: HyperParams,
    evaluator: Evaluator,
    out_dir: Union[str, Path],
    resume: bool = False,
) -> SearchResult:
    check_search_config(cfg)
    issues = validate(incumbent, space)
    if issues:
        raise InvalidConfigError("Incumbent hyperparameters are invalid: " + "; ".join(str(i) for i in issues))
    evaluator.check()

    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    history = SearchHistory(out / HISTORY_NAME)
    if resume:
        history.drop_partial_tail()
    else:
        history.reset()
    replay = history.replay()
    workers = cfg.max_workers or cfg.population

    base = incumbent
    best_h = incumbent
    best_vec = encode(incumbent, space)
    if replay.initial is not None:
        initial_score = replay.initial.score
        logger.info(f"Resuming search in {out} (initial score {initial_score:.6g})")
    else:
        initial_score, _ = evaluate_candidate(evaluator, best_vec, space, base, out / CANDIDATES_DIR / "initial")
        history.append(IncumbentRecord(iteration=-1, vector=best_vec.tolist(), score=initial_score))
        logger.info(f"Initial incumbent score {initial_score:.6g}")
    best_score = initial_score

    with ThreadPoolExecutor(max_workers=workers) as executor:
        for it in range(cfg.iterations):
            subgroup = cfg.subgroup_schedule[it % len(cfg.subgroup_schedule)]
            dims = subgroup_indices(space, subgroup)
            if not dims:
                logger.warning(f"Iteration {it}: subgroup '{subgroup}' has no scalars in the search space, skipping")
                continue
            state = cma_init(len(dims), best_vec[dims], cfg.sigma0, cfg.population, base=best_vec, active_dims=dims)
            iter_best_score, iter_best_vec = math.inf, None

            for g in range(cfg.generations_per_iteration):
                candidates = cma_ask(state, generation_seed(cfg.seed, it, g))
                if (it, g) in replay.completed:
                    scores = _replayed_scores(replay, it, g, candidates)
                else:
                    scores = _evaluate_generation(executor, evaluator, candidates, space, best_h, out, it, g, subgroup, history)
                k = int(np.argmin(scores))
                if scores[k] < iter_best_score:
                    iter_best_score, iter_best_vec = scores[k], candidates[k]
                logger.info(f"Iteration {it} ({subgroup}) generation {g}: best {scores[k]:.6g}, incumbent {best_score:.6g}")
                state = cma_tell(state, candidates, scores)

            if iter_best_vec is not None and iter_best_score < best_score:
                best_vec = np.asarray(iter_best_vec, dtype=np.float64)
                best_h = decode(best_vec, space, base=base)
                best_score = iter_best_score
                if it not in replay.incumbent_iterations:
                    history.append(IncumbentRecord(iteration=it, vector=best_vec.tolist(), score=best_score))
                logger.info(f"Iteration {it}: incumbent replaced, score {best_score:.6g}")
            save_hyperparams(best_h, out / BEST_NAME)

    save_hyperparams(best_h, out / BEST_NAME)
    logger.info(f"Search finished: best score {best_score:.6g} (initial {initial_score:.6g})")
    return SearchResult(
        best=best_h,
        best_vector=best_vec.tolist(),
        best_score=best_score,
        initial_score=initial_score,
        history=history.records(),
    )


def _replayed_scores(replay: HistoryReplay, it: int, g: int, candidates: List[np.ndarray]) -> np.ndarray:
    scores = []
    for k, vector in enumerate(candidates):
        record = replay.evaluations.get((it, g, k))
        if record is None:
            raise InvalidConfigError(f"History marks generation ({it}, {g}) complete but candidate {k} is missing")
        if not np.allclose(record.vector, vector, atol=VECTOR_TOL, rtol=0):
            raise InvalidConfigError(
                f"History does not match this search (candidate {k} of generation ({it}, {g}) differs); "
                "resume needs the same seed, space and incumbent"
            )
        scores.append(record.score)
    return np.asarray(scores, dtype=np.float64)


def _evaluate_generation(
    executor: ThreadPoolExecutor,
    evaluator: Evaluator,
    candidates: List[np.ndarray],
    space: SearchSpace,
    base: HyperParams,
    out: Path,
    it: int,
    g: int,
    subgroup: str,
    history: SearchHistory,
) -> np.ndarray:
    futures = [
        executor.submit(evaluate_candidate, evaluator, vector, space, base, out / CANDIDATES_DIR / f"it{it}_gen{g}_{k}")
        for k, vector in enumerate(candidates)
    ]
    results = [f.result() for f in futures]
    for k, (vector, (score, wall)) in enumerate(zip(candidates, results)):
        if math.isinf(score):
            logger.warning(f"Candidate {k} of iteration {it} generation {g} scored +inf")
        history.append(
            EvaluationRecord(
                iteration=it,
                generation=g,
                subgroup=subgroup,
                candidate_index=k,
                vector=vector.tolist(),
                score=score,
                wall_time=wall,
            )
        )
    scores = np.asarray([score for score, _ in results], dtype=np.float64)
    k = int(np.argmin(scores))
    history.append(
        GenerationRecord(
            iteration=it,
            generation=g,
            subgroup=subgroup,
            best_index=k,
            best_vector=candidates[k].tolist(),
            best_score=float(scores[k]),
        )
    )
    return scores
