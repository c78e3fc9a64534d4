from typing import Dict, List, Literal, Optional, Tuple

from pydantic import BaseModel, Field


class ManifestRecord(BaseModel):
    kind: Literal["sample"] = "sample"
    index: int
    image1: str
    image2: str
    flow: str
    # Augmented copies written by `generate --augment materialize`
    image1_aug: Optional[str] = None
    image2_aug: Optional[str] = None
    flow_aug: Optional[str] = None


class ManifestHeader(BaseModel):
    kind: Literal["header"] = "header"
    hyperparams_hash: str
    root_seed: int
    count: int
    resolution: Tuple[int, int]
    generator_version: str


class DatasetManifest(BaseModel):
    header: ManifestHeader
    samples: List[ManifestRecord] = Field(default_factory=list)


class Histogram(BaseModel):
    edges: List[float] = Field(..., description="Bin edges in px; len(edges) == len(masses) + 1.")
    masses: List[float]


class HistogramEntry(BaseModel):
    name: str
    masses: List[float]
    cumulative: List[float]
    first_bin_mass: float
    pixel_count: int


class HistogramReport(BaseModel):
    edges: List[float]
    entries: List[HistogramEntry]
    l1_distances: Dict[str, Dict[str, float]] = Field(default_factory=dict)
