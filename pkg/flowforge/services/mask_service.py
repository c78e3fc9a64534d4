import logging
import math
from functools import lru_cache
from pathlib import Path
from typing import List, Optional, Tuple

import numpy as np
from PIL import Image as PILImage
from pydantic import BaseModel, ConfigDict, field_validator
from scipy.ndimage import convolve1d
from scipy.special import erf

from flowforge.core.exceptions import DegeneratePolygonError, EmptyPoolError, InvalidParamsError
from flowforge.core.raster import AlphaMask, load_mask
from flowforge.core.rng import SeedPath, sample_bernoulli, sample_uniform, sample_uniform_int
from flowforge.models.hyperparams import MaskParams

logger = logging.getLogger(__name__)

RADIUS_BAND = (0.4, 1.0)
SUPERSAMPLE = 4
MAX_MASK_ATTEMPTS = 16
HOLE_CLEARANCE = 0.9
MIN_HOLE_DIAG = 1e-3
MASK_SUFFIXES = {".png", ".jpg", ".jpeg", ".bmp", ".tif", ".tiff", ".webp"}


class PolygonSpec(BaseModel):
    """Outer ring plus optional hole; vertex arrays are (N, 2) float64 (x, y)."""
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    outer: np.ndarray
    hole: Optional[np.ndarray] = None
    subdivisions: int = 0

    @field_validator("outer", "hole", mode="before")
    @classmethod
    def _as_ring(cls, v):
        if v is None:
            return None
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[1] != 2 or arr.shape[0] < 3:
            raise ValueError(f"A polygon ring needs at least 3 (x, y) vertices, got shape {arr.shape}")
        arr.setflags(write=False)
        return arr

    def rings(self) -> List[np.ndarray]:
        return [self.outer] if self.hole is None else [self.outer, self.hole]


# --- Parameter checks ---

def check_mask_params(p: MaskParams) -> None:
    if p.sides_min < 3:
        raise InvalidParamsError(f"mask.sides_min must be >= 3, got {p.sides_min}")
    if p.sides_min > p.sides_max:
        raise InvalidParamsError(f"mask.sides_min ({p.sides_min}) exceeds mask.sides_max ({p.sides_max})")
    if p.subdivisions < 0:
        raise InvalidParamsError(f"mask.subdivisions must be >= 0, got {p.subdivisions}")
    if min(p.hole_max_rel_diag, p.size_min_rel, p.size_max_rel, p.blur_strength) < 0:
        raise InvalidParamsError("mask fractions and blur_strength must be >= 0")
    if p.size_min_rel > p.size_max_rel:
        raise InvalidParamsError(f"mask.size_min_rel ({p.size_min_rel}) exceeds mask.size_max_rel ({p.size_max_rel})")
    if p.center_min_rel > p.center_max_rel:
        raise InvalidParamsError(f"mask.center_min_rel ({p.center_min_rel}) exceeds mask.center_max_rel ({p.center_max_rel})")
    if not 0.0 <= p.blur_prob <= 1.0:
        raise InvalidParamsError(f"mask.blur_prob must be in [0, 1], got {p.blur_prob}")


# --- Geometry helpers ---

def shoelace_area(ring: np.ndarray) -> float:
    x, y = ring[:, 0], ring[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def polygon_area(poly: PolygonSpec) -> float:
    area = abs(shoelace_area(poly.outer))
    if poly.hole is not None:
        area -= abs(shoelace_area(poly.hole))
    return area


def bbox_diagonal(ring: np.ndarray) -> float:
    span = ring.max(axis=0) - ring.min(axis=0)
    return float(math.hypot(span[0], span[1]))


def inscribed_radius(ring: np.ndarray, center: np.ndarray) -> float:
    """Distance from center to the nearest edge of the ring."""
    a = np.asarray(ring, dtype=np.float64)
    b = np.roll(a, -1, axis=0)
    d = b - a
    t = np.clip(np.einsum("ij,ij->i", center - a, d) / np.maximum(np.einsum("ij,ij->i", d, d), 1e-24), 0.0, 1.0)
    nearest = a + t[:, None] * d
    return float(np.min(np.hypot(*(nearest - center).T)))


def contains_point(ring: np.ndarray, point: np.ndarray) -> bool:
    """Even-odd test of a point against a closed ring."""
    x, y = float(point[0]), float(point[1])
    a = np.asarray(ring, dtype=np.float64)
    b = np.roll(a, -1, axis=0)
    straddles = (a[:, 1] > y) != (b[:, 1] > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        cross_x = a[:, 0] + (y - a[:, 1]) * (b[:, 0] - a[:, 0]) / (b[:, 1] - a[:, 1])
    return bool(np.count_nonzero(straddles & (x < cross_x)) % 2)


def chaikin(ring: np.ndarray, iterations: int) -> np.ndarray:
    """Corner cutting: every edge P_i P_{i+1} becomes 3/4 P_i + 1/4 P_{i+1}, 1/4 P_i + 3/4 P_{i+1}."""
    pts = np.asarray(ring, dtype=np.float64)
    for _ in range(iterations):
        nxt = np.roll(pts, -1, axis=0)
        q = 0.75 * pts + 0.25 * nxt
        r = 0.25 * pts + 0.75 * nxt
        pts = np.stack([q, r], axis=1).reshape(-1, 2)
    return pts


def _random_ring(gen: np.random.Generator, sides_min: int, sides_max: int) -> np.ndarray:
    n = sample_uniform_int(sides_min, sides_max, gen)
    angles = sample_uniform(0.0, 2.0 * math.pi, gen, size=n)
    radii = sample_uniform(RADIUS_BAND[0], RADIUS_BAND[1], gen, size=n)
    pts = np.stack([radii * np.cos(angles), radii * np.sin(angles)], axis=1)
    # Ordering by angle about the vertex centroid gives a star-shaped, simple ring
    c = pts.mean(axis=0)
    order = np.argsort(np.arctan2(pts[:, 1] - c[1], pts[:, 0] - c[0]), kind="stable")
    return pts[order]


# --- Operations ---

def generate_polygon(p: MaskParams, rng: SeedPath) -> PolygonSpec:
    """Random polygon in normalized object coordinates (radius <= 1 around the origin)."""
    check_mask_params(p)
    gen = rng.generator()
    ring0 = _random_ring(gen, p.sides_min, p.sides_max)
    center = ring0.mean(axis=0)
    outer = chaikin(ring0, p.subdivisions)
    hole = None
    if p.hole_max_rel_diag > 0 and sample_bernoulli(0.5, gen):
        ring = _random_ring(gen, p.sides_min, p.sides_max)
        target = p.hole_max_rel_diag * sample_uniform(0.5, 1.0, gen) * bbox_diagonal(outer)
        ring = ring - (ring.min(axis=0) + ring.max(axis=0)) / 2.0
        ring *= target / max(bbox_diagonal(ring), 1e-12)
        # The outer ring is star-shaped about the unsmoothed vertex centroid; a disk there
        # that clears every outer edge lies inside it, and the hole stays within that disk
        room = HOLE_CLEARANCE * inscribed_radius(outer, center) if contains_point(outer, center) else 0.0
        reach = float(np.max(np.hypot(ring[:, 0], ring[:, 1])))
        if reach > room:
            ring *= room / reach
        if bbox_diagonal(ring) > MIN_HOLE_DIAG:
            hole = chaikin(ring + center, p.subdivisions)
    return PolygonSpec(outer=outer, hole=hole, subdivisions=p.subdivisions)


def place_polygon(poly: PolygonSpec, center: Tuple[float, float], target_diag: float) -> PolygonSpec:
    """Scale so the outer bounding-box diagonal equals target_diag and center it (px)."""
    lo, hi = poly.outer.min(axis=0), poly.outer.max(axis=0)
    mid = (lo + hi) / 2.0
    scale = target_diag / max(bbox_diagonal(poly.outer), 1e-12)
    c = np.asarray(center, dtype=np.float64)

    def move(ring):
        return None if ring is None else (ring - mid) * scale + c

    return PolygonSpec(outer=move(poly.outer), hole=move(poly.hole), subdivisions=poly.subdivisions)


def rasterize(poly: PolygonSpec, w: int, h: int) -> AlphaMask:
    """Even-odd scanline fill at 4x4 samples per pixel; polygon already in pixel coordinates."""
    area = polygon_area(poly)
    if area < 1.0:
        raise DegeneratePolygonError(f"Polygon area {area:.3f} px^2 is below one pixel")

    s = SUPERSAMPLE
    edges = []
    for ring in poly.rings():
        nxt = np.roll(ring, -1, axis=0)
        edges.append(np.concatenate([ring, nxt], axis=1))
    e = np.concatenate(edges, axis=0)
    x0, y0, x1, y1 = e[:, 0], e[:, 1], e[:, 2], e[:, 3]

    # Subsample row r sits at y = (r + 0.5) / s - 0.5
    ymin, ymax = float(min(y0.min(), y1.min())), float(max(y0.max(), y1.max()))
    r_lo = max(0, int(math.floor((ymin + 0.5) * s - 0.5)))
    r_hi = min(h * s, int(math.ceil((ymax + 0.5) * s - 0.5)) + 1)
    coverage = np.zeros((h * s, w * s), dtype=np.uint8)
    if r_lo < r_hi:
        rows = np.arange(r_lo, r_hi)
        ys = (rows + 0.5) / s - 0.5
        yy = ys[:, None]
        # Half-open rule: an edge covers y in [min(y0, y1), max(y0, y1))
        crosses = ((y0 <= yy) & (yy < y1)) | ((y1 <= yy) & (yy < y0))
        with np.errstate(divide="ignore", invalid="ignore"):
            xs = x0 + (yy - y0) * (x1 - x0) / (y1 - y0)
        xs = np.where(crosses, xs, np.nan)
        xs.sort(axis=1) # NaNs go last
        starts, ends = xs[:, 0::2], xs[:, 1::2]
        if ends.shape[1] < starts.shape[1]:
            starts = starts[:, : ends.shape[1]]
        valid = ~np.isnan(starts) & ~np.isnan(ends)
        # Subsample column k sits at x = (k + 0.5) / s - 0.5; spans cover x in [start, end)
        k0 = np.clip(np.ceil(np.nan_to_num(starts) * s + (s - 1) / 2.0), 0, w * s).astype(np.int64)
        k1 = np.clip(np.ceil(np.nan_to_num(ends) * s + (s - 1) / 2.0), 0, w * s).astype(np.int64)
        diff = np.zeros((rows.size, w * s + 1), dtype=np.int16)
        ri = np.broadcast_to(np.arange(rows.size)[:, None], k0.shape)
        np.add.at(diff, (ri[valid], k0[valid]), 1)
        np.add.at(diff, (ri[valid], k1[valid]), -1)
        coverage[r_lo:r_hi] = np.cumsum(diff, axis=1)[:, : w * s] > 0
    alpha = coverage.reshape(h, s, w, s).sum(axis=(1, 3), dtype=np.float32) / float(s * s)
    return AlphaMask(data=alpha)


@lru_cache(maxsize=64)
def _erf_kernel(sigma: float) -> np.ndarray:
    radius = max(1, int(math.ceil(4.0 * sigma)))
    i = np.arange(-radius, radius + 1, dtype=np.float64)
    scale = sigma * math.sqrt(2.0)
    k = 0.5 * (erf((i + 0.5) / scale) - erf((i - 0.5) / scale))
    k /= k.sum()
    k.setflags(write=False)
    return k


def gaussian_kernel(sigma: float) -> np.ndarray:
    """Pixel-integrated Gaussian, normalized to sum 1."""
    return _erf_kernel(float(sigma))


def feather(mask: AlphaMask, sigma: float) -> AlphaMask:
    if sigma < 0:
        raise InvalidParamsError(f"Feather sigma must be >= 0, got {sigma}")
    if sigma == 0:
        return mask
    k = gaussian_kernel(sigma)
    out = convolve1d(mask.data.astype(np.float64), k, axis=0, mode="nearest")
    out = convolve1d(out, k, axis=1, mode="nearest")
    return AlphaMask(data=np.clip(out, 0.0, 1.0))


def place_object(p: MaskParams, frame: Tuple[int, int], rng: SeedPath) -> Tuple[Tuple[float, float], float]:
    """Object center (px) inside the configured relative box and target bounding-box diagonal (px)."""
    if p.size_min_rel > p.size_max_rel or p.center_min_rel > p.center_max_rel:
        raise InvalidParamsError("mask size/center range is inverted")
    w, h = frame
    gen = rng.generator()
    image_diag = math.hypot(w, h)
    target_diag = sample_uniform(p.size_min_rel, p.size_max_rel, gen) * image_diag
    cx = sample_uniform(p.center_min_rel, p.center_max_rel, gen) * w
    cy = sample_uniform(p.center_min_rel, p.center_max_rel, gen) * h
    return (cx, cy), target_diag


# --- Manual mask source ---

class MaskLibrary:
    """Directory of user-supplied grayscale masks, enumerated in lexicographic order."""

    def __init__(self, directory: str):
        self.directory = Path(directory)
        if not self.directory.is_dir():
            raise EmptyPoolError(f"Mask library directory not found: {directory}")
        self.paths = sorted(p for p in self.directory.iterdir() if p.suffix.lower() in MASK_SUFFIXES)
        if not self.paths:
            raise EmptyPoolError(f"No mask images in {directory}")
        logger.info(f"Mask library {directory}: {len(self.paths)} masks")

    def __len__(self) -> int:
        return len(self.paths)

    def sample(self, rng: SeedPath) -> AlphaMask:
        index = sample_uniform_int(0, len(self.paths) - 1, rng.generator())
        return load_mask(self.paths[index])

    @staticmethod
    def place(mask: AlphaMask, frame: Tuple[int, int], center: Tuple[float, float], target_diag: float) -> AlphaMask:
        """Crop to the mask's support, resize to target_diag and paste centered at center."""
        w, h = frame
        ys, xs = np.nonzero(mask.data > 0)
        if ys.size == 0:
            raise DegeneratePolygonError("Library mask is empty")
        crop = mask.data[ys.min(): ys.max() + 1, xs.min(): xs.max() + 1]
        ch, cw = crop.shape
        scale = target_diag / math.hypot(cw, ch)
        nw, nh = max(1, int(round(cw * scale))), max(1, int(round(ch * scale)))
        resized = np.asarray(
            PILImage.fromarray(np.asarray(crop, np.float32), mode="F").resize((nw, nh), PILImage.Resampling.BILINEAR),
            dtype=np.float32,
        )
        out = np.zeros((h, w), np.float32)
        left = int(round(center[0] - nw / 2.0))
        top = int(round(center[1] - nh / 2.0))
        x_lo, y_lo = max(0, left), max(0, top)
        x_hi, y_hi = min(w, left + nw), min(h, top + nh)
        if x_lo < x_hi and y_lo < y_hi:
            out[y_lo:y_hi, x_lo:x_hi] = resized[y_lo - top: y_hi - top, x_lo - left: x_hi - left]
        return AlphaMask(data=np.clip(out, 0.0, 1.0))


# --- Full pipeline ---

def generate_mask(
    p: MaskParams,
    frame: Tuple[int, int],
    rng: SeedPath,
    library: Optional[MaskLibrary] = None,
) -> Tuple[AlphaMask, Tuple[float, float]]:
    """Foreground mask with at least one pixel above 0.5, plus its placement center."""
    check_mask_params(p)
    w, h = frame
    for attempt in range(MAX_MASK_ATTEMPTS):
        sub = rng.child("attempt", attempt)
        center, target_diag = place_object(p, frame, sub.child("place"))
        try:
            if library is not None:
                mask = MaskLibrary.place(library.sample(sub.child("library")), frame, center, target_diag)
            else:
                poly = place_polygon(generate_polygon(p, sub.child("polygon")), center, target_diag)
                mask = rasterize(poly, w, h)
        except DegeneratePolygonError as e:
            logger.debug(f"Mask attempt {attempt} at {rng} rejected: {e.detail}")
            continue
        blur = sub.child("feather").generator()
        if sample_bernoulli(p.blur_prob, blur):
            mask = feather(mask, p.blur_strength * sample_uniform(0.0, 1.0, blur))
        if float(mask.data.max()) > 0.5:
            return mask, center
        logger.debug(f"Mask attempt {attempt} at {rng} has no pixel above 0.5")
    raise DegeneratePolygonError(f"No usable mask after {MAX_MASK_ATTEMPTS} attempts at {rng}")
