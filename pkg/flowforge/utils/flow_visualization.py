from typing import Optional, Sequence

import numpy as np
from matplotlib.colors import hsv_to_rgb

from flowforge.core.exceptions import InvalidParamsError
from flowforge.core.raster import FlowField, Image


def auto_max_magnitude(flow: FlowField) -> float:
    """99th percentile of the flow magnitude; 1.0 for an all-zero field."""
    mag = float(np.percentile(flow.magnitude(), 99))
    return mag if mag > 0 else 1.0


def colorize_flow(flow: FlowField, max_mag: Optional[float] = None) -> Image:
    """Color wheel: hue from direction, saturation from min(|w| / max_mag, 1); zero flow is white."""
    if max_mag is None:
        max_mag = auto_max_magnitude(flow)
    if max_mag <= 0:
        raise InvalidParamsError(f"max_mag must be positive, got {max_mag}")
    u = flow.data[..., 0].astype(np.float64)
    v = flow.data[..., 1].astype(np.float64)
    hue = np.mod(np.arctan2(v, u) / (2.0 * np.pi), 1.0)
    sat = np.minimum(flow.magnitude() / max_mag, 1.0)
    hsv = np.stack([hue, sat, np.ones_like(hue)], axis=-1)
    return Image(data=np.clip(hsv_to_rgb(hsv), 0.0, 1.0))


def side_by_side(images: Sequence[Image]) -> Image:
    return Image(data=np.concatenate([img.data for img in images], axis=1))
