from typing import Dict, Literal, Optional, Tuple

from pydantic import BaseModel, ConfigDict, Field

from flowforge.core.config import settings

SUBGROUPS = ("mask", "motion", "effects", "augment", "scene")
Subgroup = Literal["mask", "motion", "effects", "augment", "scene"]


class _ConfigModel(BaseModel):
    # Config files reject unknown keys; range invariants are checked by hyper_service.validate
    model_config = ConfigDict(extra="forbid")


# --- Foreground masks ---
class MaskParams(_ConfigModel):
    source: Literal["polygon", "library"] = "polygon"
    library_dir: Optional[str] = Field(None, description="Directory of grayscale masks used when source='library'.")
    sides_min: int = 3
    sides_max: int = 8
    hole_max_rel_diag: float = Field(0.4, description="Hole bounding-box diagonal relative to the outer polygon's.")
    subdivisions: int = 2
    size_min_rel: float = Field(0.15, description="Object bounding-box diagonal relative to the image diagonal.")
    size_max_rel: float = 0.5
    center_min_rel: float = Field(-0.1, description="Object center relative to image dimensions.")
    center_max_rel: float = 1.1
    blur_prob: float = 0.5
    blur_strength: float = Field(1.5, description="Maximum feathering sigma in pixels.")


# --- Motion ---
class MotionParams(_ConfigModel):
    p_s: float = Field(1.3, description="Scale strength; scale is drawn as p_s ** U.")
    p_r: float = Field(0.1, description="Rotation strength; angle is pi * p_r * U.")
    p_t: float = Field(0.05, description="Translation strength; offset is ImageSize * p_t * U.")
    p_g: float = Field(0.3, description="Grid strength; vertex offset is 0.5 * CellSize * p_g * U.")
    grid_size: int = 4
    grid_enabled: bool = True
    perspective_strength: float = Field(0.05, description="Foreground corner offsets relative to frame size.")
    background_perspective_strength: float = Field(0.05, description="Background corner offsets relative to frame size.")


# --- Visual effects ---
class EffectsParams(_ConfigModel):
    enabled: bool = True
    blur_prob: float = 0.5
    blur_strength: float = Field(0.1, description="Proportion of the mean absolute layer flow used as filter scale.")
    blur_filter: Literal["box", "gaussian", "none"] = "box"
    fog_prob: float = 0.5
    fog_mean: float = 0.3
    fog_std: float = 0.1


# --- Augmentation ---
class AugmentBounds(_ConfigModel):
    """Magnitudes reached at level 1."""
    rotation_deg: float = 17.0
    scale_ratio: float = 2.0
    squeeze_ratio: float = 1.25
    translation_rel: float = 0.1
    noise_std: float = 0.04


class AugmentParams(_ConfigModel):
    num_ops: int = 2
    level: float = 0.5
    enabled_spatial: bool = True
    enabled_color: bool = True
    mode: Literal["randaugment", "all"] = "randaugment"
    bounds: AugmentBounds = Field(default_factory=AugmentBounds)


# --- Full parameter set ---
class HyperParams(_ConfigModel):
    mask: MaskParams = Field(default_factory=MaskParams)
    motion: MotionParams = Field(default_factory=MotionParams)
    effects: EffectsParams = Field(default_factory=EffectsParams)
    augment: AugmentParams = Field(default_factory=AugmentParams)
    fg_count_min: int = 4
    fg_count_max: int = 4
    resolution: Tuple[int, int] = Field(default_factory=lambda: tuple(settings.DEFAULT_RESOLUTION))
    appearance_dir: Optional[str] = Field(None, description="Directory of appearance images (the AppearancePool).")


# --- Search space ---
class ScalarBound(_ConfigModel):
    lower: float
    upper: float
    scale: Literal["linear", "log"] = "linear"
    subgroup: Subgroup
    integer: bool = False


class SearchSpace(_ConfigModel):
    # Insertion order defines the coordinate order of encoded vectors
    scalars: Dict[str, ScalarBound]


class ScalarBoundOverride(_ConfigModel):
    lower: Optional[float] = None
    upper: Optional[float] = None
    scale: Optional[Literal["linear", "log"]] = None
    subgroup: Optional[Subgroup] = None
    integer: Optional[bool] = None


class SearchSpaceOverrides(_ConfigModel):
    """Partial per-scalar overrides merged over the default space."""
    scalars: Dict[str, ScalarBoundOverride] = Field(default_factory=dict)
