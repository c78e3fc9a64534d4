import logging
import math
from typing import Literal, Optional, Tuple, Union

import numpy as np
from numba import njit
from pydantic import BaseModel, ConfigDict, field_validator

from flowforge.core.exceptions import DimensionMismatchError, FoldUnrecoverableError, InvalidParamsError
from flowforge.core.raster import AlphaMask, FlowField, Image, bilinear_sample
from flowforge.core.rng import SeedPath, sample_unit
from flowforge.models.hyperparams import MotionParams

logger = logging.getLogger(__name__)

MAX_FOLD_ATTEMPTS = 16
INSIDE_TOL = 1e-9
SNAP_TOL = 1e-7
OUTSIDE_ITERATIONS = 4


class GridWarp(BaseModel):
    """n x n lattice spanning the frame (src) and its displaced copy (dst), both (n, n, 2) as (x, y).

    Vertex [j, i] sits at column i, row j; src x runs over linspace(0, W-1, n).
    """
    model_config = ConfigDict(frozen=True, arbitrary_types_allowed=True)

    n: int
    frame: Tuple[int, int]
    src: np.ndarray
    dst: np.ndarray

    @field_validator("src", "dst", mode="before")
    @classmethod
    def _as_lattice(cls, v):
        arr = np.array(v, dtype=np.float64)
        if arr.ndim != 3 or arr.shape[0] != arr.shape[1] or arr.shape[2] != 2 or arr.shape[0] < 2:
            raise ValueError(f"Grid lattice must have shape (n, n, 2) with n >= 2, got {arr.shape}")
        if not np.all(np.isfinite(arr)):
            raise ValueError("Grid vertices must be finite")
        arr.setflags(write=False)
        return arr

    @property
    def xs(self) -> np.ndarray:
        return self.src[0, :, 0]

    @property
    def ys(self) -> np.ndarray:
        return self.src[:, 0, 1]

    @property
    def displacement(self) -> np.ndarray:
        return self.dst - self.src


def lattice(frame: Tuple[int, int], n: int) -> np.ndarray:
    w, h = frame
    gx, gy = np.meshgrid(np.linspace(0.0, w - 1.0, n), np.linspace(0.0, h - 1.0, n))
    return np.stack([gx, gy], axis=-1)


def identity_grid(frame: Tuple[int, int], n: int = 2) -> GridWarp:
    src = lattice(frame, n)
    return GridWarp(n=n, frame=frame, src=src, dst=src)


def translation_grid(frame: Tuple[int, int], t: Tuple[float, float], n: int = 2) -> GridWarp:
    src = lattice(frame, n)
    return GridWarp(n=n, frame=frame, src=src, dst=src + np.asarray(t, dtype=np.float64))


# --- Composed motion ---

def rigid_transform(
    pts: np.ndarray,
    scale: float,
    angle: float,
    translation: Tuple[float, float],
    center: Tuple[float, float],
) -> np.ndarray:
    """Scale, then rotate about center, then translate."""
    c = np.asarray(center, dtype=np.float64)
    cos, sin = math.cos(angle), math.sin(angle)
    rot = np.array([[cos, -sin], [sin, cos]]) * scale
    return (pts - c) @ rot.T + c + np.asarray(translation, dtype=np.float64)


def rigid_grid(
    frame: Tuple[int, int],
    n: int,
    scale: float = 1.0,
    angle: float = 0.0,
    translation: Tuple[float, float] = (0.0, 0.0),
    center: Optional[Tuple[float, float]] = None,
) -> GridWarp:
    src = lattice(frame, n)
    if center is None:
        center = ((frame[0] - 1) / 2.0, (frame[1] - 1) / 2.0)
    return GridWarp(n=n, frame=frame, src=src, dst=rigid_transform(src, scale, angle, translation, center))


def _corner_offsets(gen: np.random.Generator, frame: Tuple[int, int], strength: float) -> np.ndarray:
    w, h = frame
    u = sample_unit(gen, size=8).reshape(2, 2, 2)
    return u * np.array([w * strength, h * strength])


def _bilerp_corners(corners: np.ndarray, pts: np.ndarray, frame: Tuple[int, int]) -> np.ndarray:
    """Bilinear blend of four (2, 2, 2) corner vectors at points given in frame pixels."""
    w, h = frame
    s = np.clip(pts[..., 0] / max(w - 1.0, 1.0), 0.0, 1.0)[..., None]
    t = np.clip(pts[..., 1] / max(h - 1.0, 1.0), 0.0, 1.0)[..., None]
    top = corners[0, 0] * (1 - s) + corners[0, 1] * s
    bottom = corners[1, 0] * (1 - s) + corners[1, 1] * s
    return top * (1 - t) + bottom * t


def check_motion_params(p: MotionParams) -> None:
    if p.p_s < 1:
        raise InvalidParamsError(f"motion.p_s must be >= 1, got {p.p_s}")
    if min(p.p_r, p.p_t, p.p_g, p.perspective_strength, p.background_perspective_strength) < 0:
        raise InvalidParamsError("motion strengths must be >= 0")
    if p.grid_size < 2:
        raise InvalidParamsError(f"motion.grid_size must be >= 2, got {p.grid_size}")


def cell_jacobians(dst: np.ndarray) -> np.ndarray:
    """Jacobian determinants at the four corners of every cell, shape (n-1, n-1, 4)."""
    a, b = dst[:-1, :-1], dst[:-1, 1:]
    c, d = dst[1:, 1:], dst[1:, :-1]
    e, f, g = b - a, d - a, a - b + c - d

    def cross(p, q):
        return p[..., 0] * q[..., 1] - p[..., 1] * q[..., 0]

    return np.stack([cross(e, f), cross(e, f + g), cross(e + g, f), cross(e + g, f + g)], axis=-1)


def is_fold_free(g: GridWarp) -> bool:
    # det J is affine in u and v, so positive corners imply positive everywhere
    return bool(np.all(cell_jacobians(g.dst) > 0))


def sample_motion(
    p: MotionParams,
    kind: Literal["foreground", "background"],
    frame: Tuple[int, int],
    rng: SeedPath,
    center: Optional[Tuple[float, float]] = None,
) -> GridWarp:
    """Sample a fold-free grid warp; foreground rigid motion is about `center` (default frame center)."""
    check_motion_params(p)
    w, h = frame
    if center is None:
        center = ((w - 1) / 2.0, (h - 1) / 2.0)
    n = 2 if kind == "background" else p.grid_size
    src = lattice(frame, n)
    for attempt in range(MAX_FOLD_ATTEMPTS):
        gen = rng.child("attempt", attempt).generator()
        if kind == "background":
            dst = src + _bilerp_corners(_corner_offsets(gen, frame, p.background_perspective_strength), src, frame)
        else:
            u_s, u_r, u_tx, u_ty = sample_unit(gen, size=4)
            pts = rigid_transform(
                src,
                scale=p.p_s ** u_s,
                angle=math.pi * p.p_r * u_r,
                translation=(w * p.p_t * u_tx, h * p.p_t * u_ty),
                center=center,
            )
            pts = pts + _bilerp_corners(_corner_offsets(gen, frame, p.perspective_strength), pts, frame)
            if p.grid_enabled and p.p_g > 0:
                cell = np.array([(w - 1.0) / (n - 1), (h - 1.0) / (n - 1)])
                pts = pts + 0.5 * cell * p.p_g * sample_unit(gen, size=n * n * 2).reshape(n, n, 2)
            dst = pts
        warp = GridWarp(n=n, frame=frame, src=src, dst=dst)
        if is_fold_free(warp):
            return warp
        logger.debug(f"Fold in {kind} warp attempt {attempt} at {rng}; resampling")
    raise FoldUnrecoverableError(f"No fold-free {kind} warp after {MAX_FOLD_ATTEMPTS} attempts at {rng}")


# --- Dense flow ---

def warp_points(g: GridWarp, pts: np.ndarray) -> np.ndarray:
    """Bilinear displacement of the lattice at arbitrary (x, y) points (edge-clamped)."""
    pts = np.asarray(pts, dtype=np.float64)
    w, h = g.frame
    tx = np.clip(pts[..., 0] / max(w - 1.0, 1.0) * (g.n - 1), 0.0, g.n - 1.0)
    ty = np.clip(pts[..., 1] / max(h - 1.0, 1.0) * (g.n - 1), 0.0, g.n - 1.0)
    return bilinear_sample(g.displacement, tx, ty)


def flow_field(g: GridWarp, w: int, h: int) -> FlowField:
    if (w, h) != tuple(g.frame):
        raise DimensionMismatchError(f"Grid spans {g.frame}, flow requested at {(w, h)}")
    gx, gy = np.meshgrid(np.arange(w, dtype=np.float64), np.arange(h, dtype=np.float64))
    return FlowField(data=warp_points(g, np.stack([gx, gy], axis=-1)))


# --- Inverse bilinear ---

@njit(cache=True, nogil=True)
def _cross(ax, ay, bx, by):
    return ax * by - ay * bx


@njit(cache=True, nogil=True)
def _invert_cell(ax, ay, bx, by, cx, cy, dx, dy, px, py, tol):
    """(found, u, v) with A + e u + f v + g u v = p; corners A, B, C, D = (0,0), (1,0), (1,1), (0,1)."""
    ex, ey = bx - ax, by - ay
    fx, fy = dx - ax, dy - ay
    gx, gy = ax - bx + cx - dx, ay - by + cy - dy
    hx, hy = px - ax, py - ay
    k2 = _cross(gx, gy, fx, fy)
    k1 = _cross(ex, ey, fx, fy) + _cross(hx, hy, gx, gy)
    k0 = _cross(hx, hy, ex, ey)
    roots = np.empty(2)
    count = 0
    if k2 == 0.0:
        if k1 != 0.0:
            roots[0] = -k0 / k1
            count = 1
    else:
        disc = k1 * k1 - 4.0 * k2 * k0
        if disc < 0.0:
            disc = 0.0 if disc > -1e-12 * (k1 * k1 + 1.0) else -1.0
        if disc >= 0.0:
            q = -0.5 * (k1 + math.copysign(math.sqrt(disc), k1))
            roots[0] = q / k2
            count = 1
            if q != 0.0:
                roots[1] = k0 / q
                count = 2
    for r in range(count):
        v = roots[r]
        if v < -tol or v > 1.0 + tol:
            continue
        den_x = ex + gx * v
        den_y = ey + gy * v
        if abs(den_x) >= abs(den_y):
            if den_x == 0.0:
                continue
            u = (hx - fx * v) / den_x
        else:
            u = (hy - fy * v) / den_y
        if u < -tol or u > 1.0 + tol:
            continue
        return True, min(max(u, 0.0), 1.0), min(max(v, 0.0), 1.0)
    return False, 0.0, 0.0


def invert_bilinear(corners, point) -> Optional[Tuple[float, float]]:
    """Local (u, v) of `point` in the quad A, B, C, D (corners at (0,0), (1,0), (1,1), (0,1)), or None."""
    (ax, ay), (bx, by), (cx, cy), (dx, dy) = np.asarray(corners, dtype=np.float64)
    px, py = (float(c) for c in point)
    found, u, v = _invert_cell(ax, ay, bx, by, cx, cy, dx, dy, px, py, INSIDE_TOL)
    return (u, v) if found else None


# --- Forward warp ---

@njit(cache=True, nogil=True)
def _try_cell(dst, i, j, px, py):
    return _invert_cell(
        dst[j, i, 0], dst[j, i, 1],
        dst[j, i + 1, 0], dst[j, i + 1, 1],
        dst[j + 1, i + 1, 0], dst[j + 1, i + 1, 1],
        dst[j + 1, i, 0], dst[j + 1, i, 1],
        px, py, INSIDE_TOL,
    )


@njit(cache=True, nogil=True)
def _displacement_at(dst, xs, ys, x, y):
    n = xs.shape[0]
    x = min(max(x, xs[0]), xs[n - 1])
    y = min(max(y, ys[0]), ys[n - 1])
    i = 0
    while i < n - 2 and x > xs[i + 1]:
        i += 1
    j = 0
    while j < n - 2 and y > ys[j + 1]:
        j += 1
    u = (x - xs[i]) / (xs[i + 1] - xs[i]) if xs[i + 1] > xs[i] else 0.0
    v = (y - ys[j]) / (ys[j + 1] - ys[j]) if ys[j + 1] > ys[j] else 0.0
    out = np.empty(2)
    for k in range(2):
        d00 = dst[j, i, k] - (xs[i] if k == 0 else ys[j])
        d01 = dst[j, i + 1, k] - (xs[i + 1] if k == 0 else ys[j])
        d10 = dst[j + 1, i, k] - (xs[i] if k == 0 else ys[j + 1])
        d11 = dst[j + 1, i + 1, k] - (xs[i + 1] if k == 0 else ys[j + 1])
        out[k] = (d00 * (1 - u) + d01 * u) * (1 - v) + (d10 * (1 - u) + d11 * u) * v
    return out


@njit(cache=True, nogil=True)
def _source_coords(dst, xs, ys, w, h):
    n = xs.shape[0]
    coords = np.empty((h, w, 2))
    found = np.zeros((h, w), dtype=np.bool_)
    cell_x = xs[n - 1] / (n - 1) if xs[n - 1] > 0 else 1.0
    cell_y = ys[n - 1] / (n - 1) if ys[n - 1] > 0 else 1.0
    x_lo, x_hi = dst[:, :, 0].min(), dst[:, :, 0].max()
    y_lo, y_hi = dst[:, :, 1].min(), dst[:, :, 1].max()
    max_steps = 2 * n + 2
    for py in range(h):
        for px in range(w):
            ok, u, v = False, 0.0, 0.0
            ci, cj = 0, 0
            if x_lo - 1e-9 <= px <= x_hi + 1e-9 and y_lo - 1e-9 <= py <= y_hi + 1e-9:
                # Walk from the undisplaced cell along the linearized solve direction
                ci = min(max(int(px / cell_x), 0), n - 2)
                cj = min(max(int(py / cell_y), 0), n - 2)
                for _ in range(max_steps):
                    ok, u, v = _try_cell(dst, ci, cj, float(px), float(py))
                    if ok:
                        break
                    ax, ay = dst[cj, ci, 0], dst[cj, ci, 1]
                    ex, ey = dst[cj, ci + 1, 0] - ax, dst[cj, ci + 1, 1] - ay
                    fx, fy = dst[cj + 1, ci, 0] - ax, dst[cj + 1, ci, 1] - ay
                    det = _cross(ex, ey, fx, fy)
                    if det == 0.0:
                        break
                    lu = _cross(px - ax, py - ay, fx, fy) / det
                    lv = _cross(ex, ey, px - ax, py - ay) / det
                    ni = ci + (1 if lu > 1.0 else (-1 if lu < 0.0 else 0))
                    nj = cj + (1 if lv > 1.0 else (-1 if lv < 0.0 else 0))
                    ni = min(max(ni, 0), n - 2)
                    nj = min(max(nj, 0), n - 2)
                    if ni == ci and nj == cj:
                        break
                    ci, cj = ni, nj
                if not ok:
                    for cj2 in range(n - 1):
                        for ci2 in range(n - 1):
                            ok, u, v = _try_cell(dst, ci2, cj2, float(px), float(py))
                            if ok:
                                ci, cj = ci2, cj2
                                break
                        if ok:
                            break
            if ok:
                sx = xs[ci] + u * (xs[ci + 1] - xs[ci])
                sy = ys[cj] + v * (ys[cj + 1] - ys[cj])
                rx, ry = np.rint(sx), np.rint(sy)
                if abs(sx - rx) < SNAP_TOL:
                    sx = rx
                if abs(sy - ry) < SNAP_TOL:
                    sy = ry
                coords[py, px, 0] = sx
                coords[py, px, 1] = sy
                found[py, px] = True
            else:
                # Outside the warped grid: fixed point of x = y - W(clamp(x))
                sx, sy = float(px), float(py)
                for _ in range(OUTSIDE_ITERATIONS):
                    d = _displacement_at(dst, xs, ys, sx, sy)
                    sx, sy = px - d[0], py - d[1]
                coords[py, px, 0] = sx
                coords[py, px, 1] = sy
    return coords, found


def source_coordinates(g: GridWarp) -> Tuple[np.ndarray, np.ndarray]:
    """Per destination pixel: frame-1 source coordinates (H, W, 2) and whether it lies inside the warped grid."""
    w, h = g.frame
    return _source_coords(
        np.ascontiguousarray(g.dst), np.ascontiguousarray(g.xs), np.ascontiguousarray(g.ys), int(w), int(h)
    )


def forward_warp(
    src: Union[Image, AlphaMask],
    g: GridWarp,
    sources: Optional[Tuple[np.ndarray, np.ndarray]] = None,
) -> Union[Image, AlphaMask]:
    """Frame-2 raster: inverse lookup per destination pixel; masks are 0 outside the warped grid.

    `sources` is a precomputed `source_coordinates(g)`, so several rasters of one layer share the grid walk.
    """
    if src.frame != tuple(g.frame):
        raise DimensionMismatchError(f"Raster {src.frame} does not match grid frame {g.frame}")
    coords, found = source_coordinates(g) if sources is None else sources
    values = bilinear_sample(src, coords[..., 0], coords[..., 1])
    if isinstance(src, AlphaMask):
        return AlphaMask(data=np.clip(np.where(found, values, 0.0), 0.0, 1.0))
    return Image(data=np.clip(values, 0.0, 1.0))
