import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage
from pydantic import BaseModel, ConfigDict, field_validator

from .exceptions import DimensionMismatchError, InvalidParamsError

logger = logging.getLogger(__name__)


def _freeze(arr: np.ndarray) -> np.ndarray:
    arr = np.array(arr, dtype=np.float32, order="C", copy=True)
    arr.setflags(write=False)
    return arr


# --- Raster value types ---

class _Raster(BaseModel):
    """Immutable float32 raster; pixel centers sit at integer coordinates, rows first."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    data: np.ndarray

    @property
    def width(self) -> int:
        return int(self.data.shape[1])

    @property
    def height(self) -> int:
        return int(self.data.shape[0])

    @property
    def frame(self) -> tuple[int, int]:
        return (self.width, self.height)

    def same_frame(self, other: "_Raster") -> bool:
        return self.data.shape[:2] == other.data.shape[:2]


class Image(_Raster):
    """RGB image, shape (H, W, 3), values in [0, 1]."""

    @field_validator("data", mode="before")
    @classmethod
    def _check(cls, v):
        arr = np.asarray(v, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 3 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"Image data must have shape (H, W, 3), got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("Image values must be finite and in [0, 1]")
        return _freeze(arr)

    @classmethod
    def constant(cls, w: int, h: int, color=(0.0, 0.0, 0.0)) -> "Image":
        return cls(data=np.broadcast_to(np.asarray(color, np.float32), (h, w, 3)))


class AlphaMask(_Raster):
    """Alpha mask, shape (H, W), values in [0, 1]."""

    @field_validator("data", mode="before")
    @classmethod
    def _check(cls, v):
        arr = np.asarray(v, dtype=np.float32)
        if arr.ndim != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"AlphaMask data must have shape (H, W), got {arr.shape}")
        if not np.all(np.isfinite(arr)) or arr.min() < 0.0 or arr.max() > 1.0:
            raise ValueError("AlphaMask values must be finite and in [0, 1]")
        return _freeze(arr)

    @classmethod
    def ones(cls, w: int, h: int) -> "AlphaMask":
        return cls(data=np.ones((h, w), np.float32))


class FlowField(_Raster):
    """Per-pixel (u, v) displacement in pixels from frame 1 to frame 2, shape (H, W, 2)."""

    @field_validator("data", mode="before")
    @classmethod
    def _check(cls, v):
        arr = np.asarray(v, dtype=np.float32)
        if arr.ndim != 3 or arr.shape[2] != 2 or arr.shape[0] < 1 or arr.shape[1] < 1:
            raise ValueError(f"FlowField data must have shape (H, W, 2), got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("FlowField components must be finite")
        return _freeze(arr)

    @classmethod
    def zeros(cls, w: int, h: int) -> "FlowField":
        return cls(data=np.zeros((h, w, 2), np.float32))

    def magnitude(self) -> np.ndarray:
        return np.hypot(self.data[..., 0].astype(np.float64), self.data[..., 1].astype(np.float64))


Raster = Union[Image, AlphaMask, FlowField]


def require_same_frame(*rasters: _Raster) -> None:
    shapes = {r.data.shape[:2] for r in rasters}
    if len(shapes) > 1:
        raise DimensionMismatchError(f"Raster dimensions disagree: {sorted(shapes)}")


# --- Sampling ---

def bilinear_sample(raster: Union[_Raster, np.ndarray], x, y) -> np.ndarray:
    """Bilinear lookup at (x, y) with edge clamping; exact at integer coordinates.

    Accepts scalars or arrays of coordinates and returns values of shape
    broadcast(x, y) + channel shape.
    """
    data = raster.data if isinstance(raster, _Raster) else raster
    h, w = data.shape[:2]
    x = np.clip(np.asarray(x, dtype=np.float64), 0.0, w - 1)
    y = np.clip(np.asarray(y, dtype=np.float64), 0.0, h - 1)
    x0 = np.floor(x).astype(np.int64)
    y0 = np.floor(y).astype(np.int64)
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    fx = x - x0
    fy = y - y0
    if data.ndim == 3:
        fx = fx[..., None]
        fy = fy[..., None]
    d = data.astype(np.float64, copy=False)
    top = d[y0, x0] * (1.0 - fx) + d[y0, x1] * fx
    bottom = d[y1, x0] * (1.0 - fx) + d[y1, x1] * fx
    return top * (1.0 - fy) + bottom * fy


def binarize(mask: AlphaMask) -> AlphaMask:
    return AlphaMask(data=(mask.data >= 0.5).astype(np.float32))


# --- I/O and image resampling ---

def resample_image(img: Image, w: int, h: int) -> Image:
    if w < 1 or h < 1:
        raise InvalidParamsError(f"Target resolution must be positive, got {w}x{h}")
    if img.frame == (w, h):
        return img
    channels = []
    for c in range(3):
        band = PILImage.fromarray(np.asarray(img.data[..., c], dtype=np.float32), mode="F")
        channels.append(np.asarray(band.resize((w, h), PILImage.Resampling.BICUBIC), dtype=np.float32))
    return Image(data=np.clip(np.stack(channels, axis=-1), 0.0, 1.0))


def _to_unit(arr: np.ndarray) -> np.ndarray:
    if arr.dtype == np.uint8:
        return arr.astype(np.float32) / 255.0
    if arr.dtype in (np.uint16, np.int32, np.int64):
        # Pillow opens 16-bit grayscale as mode "I" / "I;16"
        return np.clip(arr.astype(np.float32) / 65535.0, 0.0, 1.0)
    return np.clip(arr.astype(np.float32), 0.0, 1.0)


def load_image(path: Union[str, Path]) -> Image:
    with PILImage.open(path) as im:
        arr = np.asarray(im.convert("RGB"))
    logger.debug(f"Loaded image {path} ({arr.shape[1]}x{arr.shape[0]})")
    return Image(data=_to_unit(arr))


def load_mask(path: Union[str, Path]) -> AlphaMask:
    with PILImage.open(path) as im:
        if im.mode in ("I", "I;16", "I;16B", "I;16L", "F"):
            arr = np.asarray(im)
        else:
            arr = np.asarray(im.convert("L"))
    return AlphaMask(data=_to_unit(arr))
