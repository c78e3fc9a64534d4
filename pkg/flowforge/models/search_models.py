from typing import List, Literal, Optional, Union

from pydantic import BaseModel, ConfigDict, Field

from .hyperparams import SUBGROUPS, HyperParams, Subgroup


class EvaluatorConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    kind: Literal["external", "histogram"] = "histogram"
    command: Optional[str] = Field(None, description="Command line for the external evaluator; the config path is appended.")
    target_dir: Optional[str] = Field(None, description="Directory of .flo files whose motion histogram is the target.")
    timeout_s: Optional[float] = None
    root_seed: int = Field(0, description="Fixed seed for proxy renders so every candidate sees the same draws.")
    resolution: Optional[tuple[int, int]] = Field(None, description="Proxy render resolution override.")


class SearchConfig(BaseModel):
    model_config = ConfigDict(extra="forbid")

    iterations: int = 8
    population: int = 8
    sigma0: float = 0.2
    subgroup_schedule: List[Subgroup] = Field(default_factory=lambda: ["motion", "mask", "effects", "augment", "scene"])
    generations_per_iteration: int = 5
    evaluator: EvaluatorConfig = Field(default_factory=EvaluatorConfig)
    eval_budget: int = Field(4, description="Samples rendered per proxy evaluation.")
    seed: int = 0
    max_workers: Optional[int] = Field(None, description="Concurrent evaluations; defaults to the population size.")


class Candidate(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    vector: List[float]
    hyperparams: Optional[HyperParams] = None # None when the decoded params fail validation
    score: Optional[float] = None # None while pending; +inf on failure
    issues: List[str] = Field(default_factory=list)


# --- History records (history.jsonl) ---
class _HistoryModel(BaseModel):
    # failed evaluations are +inf and must survive a JSON round trip
    model_config = ConfigDict(ser_json_inf_nan="constants")


class EvaluationRecord(_HistoryModel):
    kind: Literal["evaluation"] = "evaluation"
    iteration: int
    generation: int
    subgroup: Optional[Subgroup] = None
    candidate_index: int
    vector: List[float]
    score: float
    wall_time: float


class GenerationRecord(_HistoryModel):
    kind: Literal["generation"] = "generation"
    iteration: int
    generation: int
    subgroup: Subgroup
    best_index: int
    best_vector: List[float]
    best_score: float


class IncumbentRecord(_HistoryModel):
    kind: Literal["incumbent"] = "incumbent"
    iteration: int # -1 for the initial incumbent evaluation
    vector: List[float]
    score: float


HistoryRecord = Union[EvaluationRecord, GenerationRecord, IncumbentRecord]


class SearchResult(BaseModel):
    best: HyperParams
    best_vector: List[float]
    best_score: float
    initial_score: float
    history: List[HistoryRecord] = Field(default_factory=list)


__all__ = [
    "SUBGROUPS",
    "Candidate",
    "EvaluationRecord",
    "EvaluatorConfig",
    "GenerationRecord",
    "HistoryRecord",
    "IncumbentRecord",
    "SearchConfig",
    "SearchResult",
]
