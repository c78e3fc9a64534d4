import logging
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Sequence, Tuple, Union

import numpy as np
from pydantic import BaseModel, ConfigDict

from flowforge.core.exceptions import DimensionMismatchError, EmptyMaskError, EmptyPoolError, InvalidParamsError
from flowforge.core.raster import AlphaMask, FlowField, Image, binarize, load_image, resample_image
from flowforge.core.rng import SeedPath, sample_uniform_int
from flowforge.models.hyperparams import EffectsParams, HyperParams
from flowforge.services.effects_service import blur_sigmas, blur_with_sigmas, fog_both, generate_fog, sample_effects
from flowforge.services.hyper_service import hyperparams_hash
from flowforge.services.mask_service import MaskLibrary, generate_mask
from flowforge.services.motion_service import GridWarp, flow_field, forward_warp, sample_motion, source_coordinates

logger = logging.getLogger(__name__)

IMAGE_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


# --- Scene value types ---

class LayerSpec(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    appearance: Image
    mask1: AlphaMask # all ones for the background
    warp: GridWarp
    depth_index: int # 0 = background


class SceneSpec(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    layers: List[LayerSpec]
    effects: EffectsParams
    frame: Tuple[int, int]
    seed: SeedPath
    hyperparams_hash: str = ""
    index: int = 0


class Provenance(BaseModel):
    hyperparams_hash: str
    root_seed: int
    index: int


class RenderedSample(BaseModel):
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    image1: Image
    image2: Image
    flow: FlowField
    provenance: Provenance


# --- Appearance images ---

@lru_cache(maxsize=32)
def _load_resampled(path: str, w: int, h: int) -> Image:
    return resample_image(load_image(path), w, h)


class AppearancePool:
    """Appearance images from a directory (lexicographic order) or an in-memory list."""

    def __init__(self, directory: Optional[Union[str, Path]] = None, images: Optional[Sequence[Image]] = None):
        self.paths: List[str] = []
        self.images: List[Image] = list(images or [])
        if directory is not None:
            root = Path(directory)
            if not root.is_dir():
                raise EmptyPoolError(f"Appearance directory not found: {directory}")
            self.paths = sorted(str(p) for p in root.iterdir() if p.suffix.lower() in IMAGE_SUFFIXES)
            logger.info(f"Appearance pool {directory}: {len(self.paths)} images")
        if len(self) < 1:
            raise EmptyPoolError(f"Appearance pool {directory or '(in-memory)'} holds no images")

    @classmethod
    def from_images(cls, images: Sequence[Image]) -> "AppearancePool":
        return cls(images=images)

    def __len__(self) -> int:
        return len(self.paths) if self.paths else len(self.images)

    def get(self, index: int, frame: Tuple[int, int]) -> Image:
        w, h = frame
        if self.paths:
            return _load_resampled(self.paths[index], w, h)
        return resample_image(self.images[index], w, h)

    def draw(self, count: int, frame: Tuple[int, int], rng: SeedPath) -> List[Image]:
        """`count` images without replacement, falling back to replacement once the pool is exhausted."""
        gen = rng.generator()
        order = list(gen.permutation(len(self))[:count])
        if count > len(self):
            logger.warning(f"Appearance pool has {len(self)} images, scene needs {count}; drawing with replacement")
            order += [int(i) for i in gen.integers(0, len(self), size=count - len(self))]
        return [self.get(int(i), frame) for i in order]


@lru_cache(maxsize=8)
def _mask_library(directory: str) -> MaskLibrary:
    return MaskLibrary(directory)


# --- Operations ---

def sample_scene(h: HyperParams, pool: AppearancePool, rng: SeedPath, index: int = 0) -> SceneSpec:
    if h.fg_count_min < 0 or h.fg_count_min > h.fg_count_max:
        raise InvalidParamsError(f"Invalid foreground count range [{h.fg_count_min}, {h.fg_count_max}]")
    frame = (int(h.resolution[0]), int(h.resolution[1]))
    k = sample_uniform_int(h.fg_count_min, h.fg_count_max, rng.child("count").generator())
    images = pool.draw(k + 1, frame, rng.child("appearance"))
    library = None
    if h.mask.source == "library":
        if not h.mask.library_dir:
            raise InvalidParamsError("mask.source 'library' requires mask.library_dir")
        library = _mask_library(h.mask.library_dir)

    layers = [
        LayerSpec(
            appearance=images[0],
            mask1=AlphaMask.ones(*frame),
            warp=sample_motion(h.motion, "background", frame, rng.child("motion", 0)),
            depth_index=0,
        )
    ]
    for depth in range(1, k + 1):
        mask, center = generate_mask(h.mask, frame, rng.child("mask", depth), library=library)
        warp = sample_motion(h.motion, "foreground", frame, rng.child("motion", depth), center=center)
        layers.append(LayerSpec(appearance=images[depth], mask1=mask, warp=warp, depth_index=depth))
    logger.debug(f"Scene {rng}: {k} foreground layers at {frame[0]}x{frame[1]}")
    return SceneSpec(
        layers=layers, effects=h.effects, frame=frame, seed=rng, hyperparams_hash=hyperparams_hash(h), index=index
    )


def composite(layers: Sequence[Tuple[Union[Image, FlowField], AlphaMask]], binarized: bool = False):
    """Back-to-front blend, background first: out = M * layer + (1 - M) * acc."""
    if not layers:
        raise DimensionMismatchError("composite needs at least one layer")
    first = layers[0][0]
    shape = first.data.shape
    acc = np.zeros(shape, np.float64)
    for raster, mask in layers:
        if raster.data.shape != shape or mask.data.shape != shape[:2]:
            raise DimensionMismatchError(f"Layer shapes {raster.data.shape}/{mask.data.shape} differ from {shape}")
        m = (binarize(mask) if binarized else mask).data.astype(np.float64)[..., None]
        acc = m * raster.data + (1.0 - m) * acc
    if isinstance(first, FlowField):
        return FlowField(data=acc)
    return Image(data=np.clip(acc, 0.0, 1.0))


def render_sample(s: SceneSpec) -> RenderedSample:
    w, h = s.frame
    decision = sample_effects(s.effects, len(s.layers), s.seed.child("effects"))
    frame1, frame2, flows = [], [], []
    for layer, blur in zip(s.layers, decision.blur_layers):
        flow = flow_field(layer.warp, w, h)
        sources = source_coordinates(layer.warp)
        img2 = forward_warp(layer.appearance, layer.warp, sources)
        mask2 = AlphaMask.ones(w, h) if layer.depth_index == 0 else forward_warp(layer.mask1, layer.warp, sources)
        img1, mask1 = layer.appearance, layer.mask1
        if blur:
            try:
                sigmas = blur_sigmas(layer.mask1, flow, decision.blur_strength)
            except EmptyMaskError:
                sigmas = None
                logger.debug(f"Layer {layer.depth_index} of {s.seed} has no foreground pixel; blur skipped")
            if sigmas is not None:
                # One filter for both frames
                def smear(data):
                    return np.clip(blur_with_sigmas(data, sigmas, decision.blur_filter), 0.0, 1.0)

                img1, img2 = Image(data=smear(img1.data)), Image(data=smear(img2.data))
                mask1, mask2 = AlphaMask(data=smear(mask1.data)), AlphaMask(data=smear(mask2.data))
        frame1.append((img1, mask1))
        frame2.append((img2, mask2))
        flows.append((flow, layer.mask1))

    image1 = composite(frame1)
    image2 = composite(frame2)
    flow = composite(flows, binarized=True)
    if decision.fog:
        fog = generate_fog(w, h, decision.fog_mean, decision.fog_std, decision.fog_seed)
        image1, image2 = fog_both([image1, image2], fog)
    root = s.seed.root_seed
    return RenderedSample(
        image1=image1,
        image2=image2,
        flow=flow,
        provenance=Provenance(hyperparams_hash=s.hyperparams_hash, root_seed=root, index=s.index),
    )


def sample_seed(root_seed: int, index: int) -> SeedPath:
    return SeedPath(root_seed=root_seed, path=(("sample", index),))


def render_index(h: HyperParams, pool: AppearancePool, root_seed: int, index: int) -> RenderedSample:
    """Pure per-sample function of (HyperParams, root_seed, index)."""
    return render_sample(sample_scene(h, pool, sample_seed(root_seed, index), index=index))
