import hashlib
import json
import logging
import math
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Union

import numpy as np
from pydantic import BaseModel, ValidationError

from flowforge.core.config import DEFAULT_HYPERPARAMS_PATH
from flowforge.core.exceptions import DimensionMismatchError, InvalidConfigError
from flowforge.models.hyperparams import (
    HyperParams,
    ScalarBound,
    SearchSpace,
    SearchSpaceOverrides,
)

logger = logging.getLogger(__name__)

CATEGORICAL_FILTER = "effects.blur_filter"
FILTER_VALUES = {"box": 0.25, "gaussian": 0.75, "none": 0.25}
ORDERED_PAIRS = (
    ("mask.sides_min", "mask.sides_max"),
    ("mask.size_min_rel", "mask.size_max_rel"),
    ("mask.center_min_rel", "mask.center_max_rel"),
    ("fg_count_min", "fg_count_max"),
)


class ConfigIssue(BaseModel):
    path: str
    message: str

    def __str__(self) -> str:
        return f"{self.path}: {self.message}"


# --- Serialization ---

def canonical_json(h: HyperParams, indent: Optional[int] = None) -> str:
    separators = (",", ": ") if indent else (",", ":")
    return json.dumps(h.model_dump(mode="json"), sort_keys=True, indent=indent, separators=separators)


def hyperparams_hash(h: HyperParams) -> str:
    return hashlib.sha256(canonical_json(h).encode("utf-8")).hexdigest()[:16]


def _read_json(path: Union[str, Path]) -> Dict[str, Any]:
    p = Path(path)
    if not p.is_file():
        raise InvalidConfigError(f"Config file not found: {p}")
    try:
        return json.loads(p.read_text(encoding="utf-8"))
    except json.JSONDecodeError as e:
        raise InvalidConfigError(f"Config file {p} is not valid JSON: {e}") from e


def parse_hyperparams(data: Dict[str, Any], source: str = "<memory>") -> HyperParams:
    data = {k: v for k, v in data.items() if k != "search_space"}
    try:
        h = HyperParams.model_validate(data)
    except ValidationError as e:
        raise InvalidConfigError(f"Invalid hyperparameters in {source}: {e}") from e
    issues = validate(h)
    if issues:
        raise InvalidConfigError(f"Invalid hyperparameters in {source}: " + "; ".join(str(i) for i in issues))
    return h


def load_hyperparams(path: Union[str, Path]) -> HyperParams:
    """Read a HyperParams file; an optional top-level "search_space" block is left for load_search_space."""
    h = parse_hyperparams(_read_json(path), source=str(path))
    logger.info(f"Loaded hyperparameters from {path} (hash {hyperparams_hash(h)})")
    return h


def load_default_hyperparams() -> HyperParams:
    return load_hyperparams(DEFAULT_HYPERPARAMS_PATH)


def save_hyperparams(h: HyperParams, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.parent.mkdir(parents=True, exist_ok=True)
    p.write_text(canonical_json(h, indent=2) + "\n", encoding="utf-8")
    return p


# --- Search space ---

def default_search_space() -> SearchSpace:
    def b(lo, hi, group, scale="linear", integer=False):
        return ScalarBound(lower=lo, upper=hi, scale=scale, subgroup=group, integer=integer)

    return SearchSpace(scalars={
        # mask
        "mask.sides_min": b(3, 12, "mask", integer=True),
        "mask.sides_max": b(3, 12, "mask", integer=True),
        "mask.hole_max_rel_diag": b(0.0, 0.8, "mask"),
        "mask.subdivisions": b(0, 4, "mask", integer=True),
        "mask.size_min_rel": b(0.05, 1.0, "mask"),
        "mask.size_max_rel": b(0.05, 1.0, "mask"),
        "mask.center_min_rel": b(-0.2, 1.2, "mask"),
        "mask.center_max_rel": b(-0.2, 1.2, "mask"),
        "mask.blur_prob": b(0.0, 1.0, "mask"),
        "mask.blur_strength": b(0.1, 10.0, "mask", scale="log"),
        # motion
        "motion.p_s": b(1.0, 3.0, "motion"),
        "motion.p_r": b(0.0, 1.0, "motion"),
        "motion.p_t": b(0.005, 0.5, "motion", scale="log"),
        "motion.p_g": b(0.01, 1.0, "motion", scale="log"),
        "motion.grid_size": b(2, 8, "motion", integer=True),
        "motion.perspective_strength": b(0.0, 0.3, "motion"),
        "motion.background_perspective_strength": b(0.0, 0.3, "motion"),
        # effects
        "effects.blur_prob": b(0.0, 1.0, "effects"),
        "effects.blur_strength": b(0.01, 1.0, "effects", scale="log"),
        CATEGORICAL_FILTER: b(0.0, 1.0, "effects"),
        "effects.fog_prob": b(0.0, 1.0, "effects"),
        "effects.fog_mean": b(0.0, 1.0, "effects"),
        "effects.fog_std": b(0.01, 0.5, "effects", scale="log"),
        # augment
        "augment.num_ops": b(0, 5, "augment", integer=True),
        "augment.level": b(0.0, 1.0, "augment"),
        # scene (resolution is held fixed)
        "fg_count_min": b(0, 8, "scene", integer=True),
        "fg_count_max": b(0, 8, "scene", integer=True),
    })


def check_search_space(space: SearchSpace) -> None:
    reference = HyperParams()
    problems = []
    for path, bound in space.scalars.items():
        try:
            get_value(reference, path)
        except KeyError:
            problems.append(f"{path}: unknown hyperparameter")
        if not bound.lower < bound.upper:
            problems.append(f"{path}: lower bound {bound.lower} must be below upper bound {bound.upper}")
        if bound.scale == "log" and bound.lower <= 0:
            problems.append(f"{path}: log scale requires a positive lower bound")
    if problems:
        raise InvalidConfigError("Invalid search space: " + "; ".join(problems))


def load_search_space(path: Optional[Union[str, Path]] = None) -> SearchSpace:
    """Default space with per-scalar overrides from `path` ({"scalars": ...} or {"search_space": {"scalars": ...}})."""
    space = default_search_space()
    if path is not None:
        data = _read_json(path)
        data = data.get("search_space", data)
        try:
            overrides = SearchSpaceOverrides.model_validate(data)
        except ValidationError as e:
            raise InvalidConfigError(f"Invalid search space in {path}: {e}") from e
        scalars = dict(space.scalars)
        for name, override in overrides.scalars.items():
            patch = override.model_dump(exclude_none=True)
            if name in scalars:
                scalars[name] = scalars[name].model_copy(update=patch)
            else:
                try:
                    scalars[name] = ScalarBound.model_validate(patch)
                except ValidationError as e:
                    raise InvalidConfigError(f"New search scalar {name} needs lower/upper/subgroup: {e}") from e
        space = SearchSpace(scalars=scalars)
    check_search_space(space)
    return space


def scalar_paths(space: SearchSpace) -> List[str]:
    return list(space.scalars.keys())


def subgroup_indices(space: SearchSpace, tag: str) -> List[int]:
    return [i for i, bound in enumerate(space.scalars.values()) if bound.subgroup == tag]


# --- Field access ---

def get_value(h: Union[HyperParams, Dict[str, Any]], path: str) -> Any:
    node: Any = h.model_dump() if isinstance(h, BaseModel) else h
    for key in path.split("."):
        if not isinstance(node, dict) or key not in node:
            raise KeyError(path)
        node = node[key]
    return node


def _set_value(data: Dict[str, Any], path: str, value: Any) -> None:
    keys = path.split(".")
    node = data
    for key in keys[:-1]:
        node = node[key]
    node[keys[-1]] = value


# --- Validation ---

def validate(h: HyperParams, space: Optional[SearchSpace] = None) -> List[ConfigIssue]:
    """Every violated invariant or bound, with the dotted path of the field. Empty list means ok."""
    issues: List[ConfigIssue] = []

    def need(ok: bool, path: str, message: str):
        if not ok:
            issues.append(ConfigIssue(path=path, message=message))

    m, mo, e, a = h.mask, h.motion, h.effects, h.augment
    need(m.sides_min >= 3, "mask.sides_min", f"sides_min (>=3), got {m.sides_min}")
    need(m.sides_min <= m.sides_max, "mask.sides_max", "sides_min must not exceed sides_max")
    need(m.subdivisions >= 0, "mask.subdivisions", "subdivisions (>=0)")
    for name in ("hole_max_rel_diag", "size_min_rel", "size_max_rel", "blur_strength"):
        need(getattr(m, name) >= 0, f"mask.{name}", f"{name} (>=0)")
    need(m.size_min_rel <= m.size_max_rel, "mask.size_max_rel", "size_min_rel must not exceed size_max_rel")
    need(m.center_min_rel <= m.center_max_rel, "mask.center_max_rel", "center_min_rel must not exceed center_max_rel")
    need(0 <= m.blur_prob <= 1, "mask.blur_prob", "probability in [0, 1]")
    need(m.source != "library" or bool(m.library_dir), "mask.library_dir", "required when mask.source is 'library'")

    need(mo.p_s >= 1, "motion.p_s", f"p_s (>=1), got {mo.p_s}")
    for name in ("p_r", "p_t", "p_g", "perspective_strength", "background_perspective_strength"):
        need(getattr(mo, name) >= 0, f"motion.{name}", f"{name} (>=0)")
    need(mo.grid_size >= 2, "motion.grid_size", "grid_size (>=2)")

    for name in ("blur_prob", "fog_prob", "fog_mean"):
        need(0 <= getattr(e, name) <= 1, f"effects.{name}", f"{name} in [0, 1]")
    need(e.blur_strength >= 0, "effects.blur_strength", "blur_strength (>=0)")
    need(e.fog_std >= 0, "effects.fog_std", "fog_std (>=0)")

    need(a.num_ops >= 0, "augment.num_ops", "num_ops (>=0)")
    need(0 <= a.level <= 1, "augment.level", "level in [0, 1]")
    need(
        a.num_ops == 0 or a.enabled_spatial or a.enabled_color,
        "augment.enabled_spatial",
        "num_ops > 0 needs spatial or color augmentations enabled",
    )

    need(h.fg_count_min >= 0, "fg_count_min", "fg_count_min (>=0)")
    need(h.fg_count_min <= h.fg_count_max, "fg_count_max", "fg_count_min must not exceed fg_count_max")
    need(min(h.resolution) >= 1, "resolution", "width and height must be positive")

    space = space or default_search_space()
    for path, bound in space.scalars.items():
        if path == CATEGORICAL_FILTER:
            continue
        try:
            value = float(get_value(h, path))
        except KeyError:
            continue
        need(bound.lower <= value <= bound.upper, path, f"{value} outside search bound [{bound.lower}, {bound.upper}]")
    return issues


# --- Normalized coordinates ---

def _to_unit(value: float, bound: ScalarBound) -> float:
    if bound.scale == "log":
        c = math.log(value / bound.lower) / math.log(bound.upper / bound.lower) if value > 0 else 0.0
    else:
        c = (value - bound.lower) / (bound.upper - bound.lower)
    return min(max(c, 0.0), 1.0)


def _from_unit(c: float, bound: ScalarBound) -> float:
    c = min(max(float(c), 0.0), 1.0)
    if bound.scale == "log":
        value = bound.lower * (bound.upper / bound.lower) ** c
    else:
        value = bound.lower + c * (bound.upper - bound.lower)
    return min(max(value, bound.lower), bound.upper)


def encode(h: HyperParams, space: Optional[SearchSpace] = None) -> np.ndarray:
    space = space or default_search_space()
    coords = []
    for path, bound in space.scalars.items():
        value = get_value(h, path)
        if path == CATEGORICAL_FILTER:
            value = FILTER_VALUES[value]
        coords.append(_to_unit(float(value), bound))
    return np.asarray(coords, dtype=np.float64)


def decode(vector: Sequence[float], space: Optional[SearchSpace] = None, base: Optional[HyperParams] = None) -> HyperParams:
    """Map coordinates back to HyperParams; fields outside the space come from `base`.

    Coordinates are clamped to [0, 1], integers rounded, and min/max pairs swapped into order.
    """
    space = space or default_search_space()
    vector = np.asarray(vector, dtype=np.float64)
    if vector.shape != (len(space.scalars),):
        raise DimensionMismatchError(f"Vector of length {vector.size} does not match {len(space.scalars)} scalars")
    base = base or HyperParams()
    data = base.model_dump()
    for c, (path, bound) in zip(vector, space.scalars.items()):
        value: Any = _from_unit(c, bound)
        if path == CATEGORICAL_FILTER:
            # The "none" ablation is not searched
            if get_value(data, path) == "none":
                continue
            value = "box" if value < 0.5 else "gaussian"
        elif bound.integer:
            value = int(np.rint(value))
        _set_value(data, path, value)
    for lo_path, hi_path in ORDERED_PAIRS:
        try:
            lo, hi = get_value(data, lo_path), get_value(data, hi_path)
        except KeyError:
            continue
        if lo > hi:
            _set_value(data, lo_path, hi)
            _set_value(data, hi_path, lo)
    return HyperParams.model_validate(data)
