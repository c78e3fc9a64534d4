import io
import logging
from pathlib import Path
from typing import Union

import numpy as np
from PIL import Image as PILImage

from flowforge.core.exceptions import BadMagicError, MissingFileError, TruncatedFileError
from flowforge.core.raster import FlowField, Image

logger = logging.getLogger(__name__)

FLO_MAGIC = 202021.25
_MAGIC_BYTES = np.array([FLO_MAGIC], dtype="<f4").tobytes()
_HEADER_SIZE = 12


# --- .flo (Middlebury) ---

def write_flo(flow: FlowField) -> bytes:
    """Little-endian: float32 magic, int32 width, int32 height, then row-major interleaved (u, v) float32."""
    h, w = flow.data.shape[:2]
    return _MAGIC_BYTES + np.array([w, h], dtype="<i4").tobytes() + flow.data.astype("<f4").tobytes()


def read_flo(data: bytes) -> FlowField:
    if len(data) < 4:
        raise TruncatedFileError(f".flo stream of {len(data)} bytes has no header")
    if data[:4] != _MAGIC_BYTES:
        raise BadMagicError(f"Expected .flo magic {FLO_MAGIC}, got {np.frombuffer(data[:4], '<f4')[0]}")
    if len(data) < _HEADER_SIZE:
        raise TruncatedFileError(f".flo stream of {len(data)} bytes ends inside the header")
    w, h = (int(v) for v in np.frombuffer(data[4:12], dtype="<i4"))
    if w < 1 or h < 1:
        raise BadMagicError(f".flo header declares invalid size {w}x{h}")
    expected = _HEADER_SIZE + 8 * w * h
    if len(data) < expected:
        raise TruncatedFileError(f".flo payload needs {expected} bytes, got {len(data)}")
    payload = np.frombuffer(data, dtype="<f4", count=2 * w * h, offset=_HEADER_SIZE)
    return FlowField(data=payload.reshape(h, w, 2).astype(np.float32))


def save_flo(flow: FlowField, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.write_bytes(write_flo(flow))
    return p


def load_flo(path: Union[str, Path]) -> FlowField:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"Flow file not found: {p}")
    return read_flo(p.read_bytes())


# --- 8-bit PNG ---

def quantize_image(img: Image) -> np.ndarray:
    return np.round(np.asarray(img.data, dtype=np.float64) * 255.0).astype(np.uint8)


def encode_png(img: Image) -> bytes:
    buf = io.BytesIO()
    PILImage.fromarray(quantize_image(img), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def write_png(img: Image, path: Union[str, Path]) -> Path:
    p = Path(path)
    p.write_bytes(encode_png(img))
    return p


def read_png(path: Union[str, Path]) -> Image:
    p = Path(path)
    if not p.is_file():
        raise MissingFileError(f"Image file not found: {p}")
    with PILImage.open(p) as im:
        arr = np.asarray(im.convert("RGB"), dtype=np.float32) / 255.0
    return Image(data=arr)
