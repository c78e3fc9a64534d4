import logging
import math
from typing import List, Literal, Optional, Tuple

import numpy as np
from PIL import Image as PILImage
from pydantic import BaseModel, ConfigDict
from scipy.ndimage import convolve1d

from flowforge.core.exceptions import DimensionMismatchError, EmptyMaskError, InvalidParamsError
from flowforge.core.raster import AlphaMask, FlowField, Image, binarize, require_same_frame
from flowforge.core.rng import SeedPath, sample_bernoulli
from flowforge.models.hyperparams import EffectsParams
from flowforge.services.mask_service import gaussian_kernel

logger = logging.getLogger(__name__)

MIN_BLUR_SIGMA = 0.25 # axes below this are left untouched


class EffectsDecision(BaseModel):
    """Per-scene outcome of the effect coin flips; rendering is a pure function of it."""
    model_config = ConfigDict(frozen=True)

    blur_layers: Tuple[bool, ...]
    blur_filter: Literal["box", "gaussian", "none"]
    blur_strength: float
    fog: bool
    fog_mean: float
    fog_std: float
    fog_seed: Optional[SeedPath] = None


def check_effects_params(p: EffectsParams) -> None:
    for name in ("blur_prob", "fog_prob", "fog_mean"):
        if not 0.0 <= getattr(p, name) <= 1.0:
            raise InvalidParamsError(f"effects.{name} must be in [0, 1], got {getattr(p, name)}")
    if p.blur_strength < 0 or p.fog_std < 0:
        raise InvalidParamsError("effects strengths must be >= 0")


def sample_effects(p: EffectsParams, layer_count: int, rng: SeedPath) -> EffectsDecision:
    check_effects_params(p)
    gen = rng.generator()
    # Draws are always consumed so toggling `enabled` never shifts other streams
    blur = tuple(sample_bernoulli(p.blur_prob, gen) for _ in range(layer_count))
    fog = sample_bernoulli(p.fog_prob, gen)
    if not p.enabled or p.blur_filter == "none":
        blur = tuple(False for _ in blur)
    return EffectsDecision(
        blur_layers=blur,
        blur_filter=p.blur_filter,
        blur_strength=p.blur_strength,
        fog=fog and p.enabled,
        fog_mean=p.fog_mean,
        fog_std=p.fog_std,
        fog_seed=rng.child("fog"),
    )


# --- Motion blur ---

def motion_blur_kernel(sigma: float, kind: str) -> np.ndarray:
    """Normalized 1-D kernel; box width rounds 2*sigma + 1 to the nearest odd integer."""
    if kind == "box":
        half = int(math.floor(sigma + 0.5))
        return np.full(2 * half + 1, 1.0 / (2 * half + 1))
    if kind == "gaussian":
        return gaussian_kernel(sigma)
    raise InvalidParamsError(f"Unknown blur filter '{kind}'")


def blur_sigmas(mask: AlphaMask, flow: FlowField, strength: float) -> Tuple[float, float]:
    """strength times the mean absolute flow per axis over pixels with binarized mask 1."""
    inside = binarize(mask).data > 0
    if not inside.any():
        raise EmptyMaskError("Motion blur needs at least one foreground pixel")
    sx = strength * float(np.abs(flow.data[..., 0][inside].astype(np.float64)).mean())
    sy = strength * float(np.abs(flow.data[..., 1][inside].astype(np.float64)).mean())
    return sx, sy


def blur_with_sigmas(data: np.ndarray, sigmas: Tuple[float, float], kind: str) -> np.ndarray:
    out = data.astype(np.float64)
    sx, sy = sigmas
    if sx >= MIN_BLUR_SIGMA:
        out = convolve1d(out, motion_blur_kernel(sx, kind), axis=1, mode="nearest")
    if sy >= MIN_BLUR_SIGMA:
        out = convolve1d(out, motion_blur_kernel(sy, kind), axis=0, mode="nearest")
    return out


def motion_blur(
    img: Image,
    mask: AlphaMask,
    flow: FlowField,
    strength: float,
    kind: str,
) -> Tuple[Image, AlphaMask]:
    if strength < 0:
        raise InvalidParamsError(f"Blur strength must be >= 0, got {strength}")
    require_same_frame(img, mask, flow)
    sigmas = blur_sigmas(mask, flow, strength)
    return (
        Image(data=np.clip(blur_with_sigmas(img.data, sigmas, kind), 0.0, 1.0)),
        AlphaMask(data=np.clip(blur_with_sigmas(mask.data, sigmas, kind), 0.0, 1.0)),
    )


# --- Fog ---

def generate_fog(w: int, h: int, mean: float, std: float, rng: SeedPath) -> AlphaMask:
    """Octave noise: bicubically upsampled Gaussian images at w/2^k, std proportional to 2^k / min(w, h)."""
    if std < 0:
        raise InvalidParamsError(f"Fog std must be >= 0, got {std}")
    if std == 0:
        return AlphaMask(data=np.full((h, w), np.clip(mean, 0.0, 1.0), np.float32))
    gen = rng.generator()
    short = min(w, h)
    octaves = max(0, int(math.floor(math.log2(short))) - 2)
    field = np.zeros((h, w), np.float64)
    for k in range(octaves + 1):
        ow, oh = max(1, w >> k), max(1, h >> k)
        noise = gen.normal(0.0, (2.0 ** k) / short, size=(oh, ow)).astype(np.float32)
        layer = PILImage.fromarray(noise, mode="F").resize((w, h), PILImage.Resampling.BICUBIC)
        field += np.asarray(layer, dtype=np.float64)
    spread = field.std()
    if spread > 0:
        field = (field - field.mean()) / spread * std + mean
    else:
        field = np.full_like(field, mean)
    return AlphaMask(data=np.clip(field, 0.0, 1.0))


def apply_fog(img: Image, fog: AlphaMask) -> Image:
    if img.frame != fog.frame:
        raise DimensionMismatchError(f"Fog {fog.frame} does not match image {img.frame}")
    a = fog.data[..., None].astype(np.float64)
    return Image(data=np.clip(a + (1.0 - a) * img.data, 0.0, 1.0))


def fog_both(images: List[Image], fog: AlphaMask) -> List[Image]:
    """The same fog field over every frame of a sample."""
    return [apply_fog(img, fog) for img in images]
