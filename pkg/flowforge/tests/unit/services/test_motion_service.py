import math

import numpy as np
import pytest

from flowforge.core.exceptions import DimensionMismatchError, FoldUnrecoverableError, InvalidParamsError
from flowforge.core.raster import AlphaMask, Image
from flowforge.core.rng import SeedPath
from flowforge.models.hyperparams import MotionParams
from flowforge.services.motion_service import (
    GridWarp,
    _displacement_at,
    _invert_cell,
    _source_coords,
    flow_field,
    forward_warp,
    identity_grid,
    invert_bilinear,
    is_fold_free,
    lattice,
    rigid_grid,
    rigid_transform,
    sample_motion,
    source_coordinates,
    translation_grid,
    warp_points,
)

FRAME = (48, 40)


@pytest.fixture
def seed():
    return SeedPath(root_seed=7)


@pytest.fixture
def gradient_image():
    """Smooth, band-limited test image."""
    ys, xs = np.mgrid[0:40, 0:48].astype(np.float64)
    r = 0.5 + 0.4 * np.sin(xs / 9.0)
    g = 0.5 + 0.4 * np.cos(ys / 7.0)
    b = (xs + ys) / (47.0 + 39.0)
    return Image(data=np.stack([r, g, b], axis=-1))


def _bilinear(corners, u, v):
    a, b, c, d = (np.asarray(p, dtype=np.float64) for p in corners)
    return a + (b - a) * u + (d - a) * v + (a - b + c - d) * u * v


# --- Tests for invert_bilinear ---

def test_invert_unit_square():
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert invert_bilinear(corners, (0.25, 0.75)) == pytest.approx((0.25, 0.75))


def test_invert_translated_square():
    corners = [(5, 0), (6, 0), (6, 1), (5, 1)]
    assert invert_bilinear(corners, (5.5, 0.5)) == pytest.approx((0.5, 0.5))


def test_invert_point_outside_returns_none():
    corners = [(0, 0), (1, 0), (1, 1), (0, 1)]
    assert invert_bilinear(corners, (1.5, 0.5)) is None


def test_invert_round_trip_on_random_quads():
    gen = np.random.default_rng(11)
    base = np.array([(0, 0), (1, 0), (1, 1), (0, 1)], dtype=np.float64)
    for _ in range(2000):
        corners = base + gen.uniform(-0.2, 0.2, size=(4, 2))
        u, v = gen.uniform(0, 1, size=2)
        result = invert_bilinear(corners, _bilinear(corners, u, v))
        assert result is not None
        assert result == pytest.approx((u, v), abs=1e-9)


def test_invert_parallelogram_uses_linear_branch():
    corners = [(0, 0), (2, 0), (3, 1), (1, 1)]
    point = _bilinear(corners, 0.3, 0.6)
    assert invert_bilinear(corners, point) == pytest.approx((0.3, 0.6), abs=1e-12)


# --- Tests for flow_field ---

def test_identity_grid_has_zero_flow():
    np.testing.assert_array_equal(flow_field(identity_grid(FRAME, 4), *FRAME).data, 0.0)


def test_translation_grid_has_constant_flow():
    flow = flow_field(translation_grid(FRAME, (2.5, -1.25), n=3), *FRAME)
    np.testing.assert_allclose(flow.data[..., 0], 2.5)
    np.testing.assert_allclose(flow.data[..., 1], -1.25)


def test_rotation_flow_matches_closed_form_at_vertices():
    theta = 0.3
    g = rigid_grid(FRAME, 2, angle=theta)
    flow = flow_field(g, *FRAME)
    c = np.array([(FRAME[0] - 1) / 2.0, (FRAME[1] - 1) / 2.0])
    rot = np.array([[math.cos(theta), -math.sin(theta)], [math.sin(theta), math.cos(theta)]])
    for x, y in [(0, 0), (FRAME[0] - 1, 0), (0, FRAME[1] - 1), (FRAME[0] - 1, FRAME[1] - 1)]:
        expected = (rot - np.eye(2)) @ (np.array([x, y]) - c)
        np.testing.assert_allclose(flow.data[y, x], expected, atol=1e-5)


def test_flow_field_rejects_other_frame():
    with pytest.raises(DimensionMismatchError):
        flow_field(identity_grid(FRAME), 10, 10)


def test_warp_points_at_vertices_equals_displacement(seed):
    g = sample_motion(MotionParams(), "foreground", FRAME, seed)
    np.testing.assert_allclose(warp_points(g, g.src), g.displacement, atol=1e-9)


# --- Tests for sample_motion ---

def test_zero_strengths_give_identity(seed):
    p = MotionParams(p_s=1.0, p_r=0.0, p_t=0.0, p_g=0.0, perspective_strength=0.0)
    g = sample_motion(p, "foreground", FRAME, seed)
    np.testing.assert_allclose(g.dst, g.src, atol=1e-9)


def test_rotation_strength_one_at_unit_draw_is_half_turn():
    pts = lattice(FRAME, 3)
    c = ((FRAME[0] - 1) / 2.0, (FRAME[1] - 1) / 2.0)
    turned = rigid_transform(pts, 1.3 ** 0.0, math.pi * 1.0 * 1.0, (0.0, 0.0), c)
    np.testing.assert_allclose(turned, 2 * np.asarray(c) - pts, atol=1e-9)


def test_background_is_perspective_only(seed):
    p = MotionParams(p_s=3.0, p_r=1.0, p_t=0.5, p_g=1.0, background_perspective_strength=0.0)
    g = sample_motion(p, "background", FRAME, seed)
    assert g.n == 2
    np.testing.assert_allclose(g.dst, g.src, atol=1e-9)


def test_background_perspective_moves_corners(seed):
    g = sample_motion(MotionParams(background_perspective_strength=0.05), "background", FRAME, seed)
    assert g.n == 2
    assert not np.allclose(g.dst, g.src)
    assert np.all(np.abs(g.displacement[..., 0]) <= 0.05 * FRAME[0] + 1e-9)


def test_foreground_uses_configured_grid_size(seed):
    g = sample_motion(MotionParams(grid_size=5), "foreground", FRAME, seed)
    assert g.n == 5
    assert g.src.shape == (5, 5, 2)


def test_sampled_warps_are_fold_free_and_deterministic(seed):
    p = MotionParams(p_g=0.8, p_r=0.5)
    for i in range(20):
        g = sample_motion(p, "foreground", FRAME, seed.child("layer", i))
        assert is_fold_free(g)
        np.testing.assert_array_equal(g.dst, sample_motion(p, "foreground", FRAME, seed.child("layer", i)).dst)


def test_unrecoverable_fold(seed):
    with pytest.raises(FoldUnrecoverableError):
        sample_motion(MotionParams(p_g=50.0, grid_size=8), "foreground", FRAME, seed)


def test_mirrored_grid_is_folded():
    src = lattice(FRAME, 2)
    mirrored = src.copy()
    mirrored[..., 0] = FRAME[0] - 1 - mirrored[..., 0]
    assert not is_fold_free(GridWarp(n=2, frame=FRAME, src=src, dst=mirrored))


def test_invalid_motion_params(seed):
    with pytest.raises(InvalidParamsError):
        sample_motion(MotionParams(p_s=0.5), "foreground", FRAME, seed)
    with pytest.raises(InvalidParamsError):
        sample_motion(MotionParams(grid_size=1), "foreground", FRAME, seed)


# --- Tests for forward_warp ---

def test_identity_warp_is_exact(gradient_image):
    out = forward_warp(gradient_image, identity_grid(FRAME, 3))
    np.testing.assert_array_equal(out.data, gradient_image.data)


def test_integer_translation_shifts_with_edge_clamp(gradient_image):
    out = forward_warp(gradient_image, translation_grid(FRAME, (3.0, 0.0)))
    np.testing.assert_allclose(out.data[:, 3:], gradient_image.data[:, :-3], atol=1e-6)
    for x in range(3):
        np.testing.assert_allclose(out.data[:, x], gradient_image.data[:, 0], atol=1e-6)


def test_mask_is_zero_outside_warped_grid():
    out = forward_warp(AlphaMask.ones(*FRAME), translation_grid(FRAME, (10.0, 0.0)))
    np.testing.assert_array_equal(out.data[:, :10], 0.0)
    np.testing.assert_allclose(out.data[:, 10:], 1.0)


def test_source_coordinates_agree_with_flow(seed):
    g = sample_motion(MotionParams(p_g=0.5), "foreground", (64, 64), seed)
    coords, found = source_coordinates(g)
    assert found.any()
    ys, xs = np.nonzero(found)
    src = coords[ys, xs]
    landed = src + warp_points(g, src)
    np.testing.assert_allclose(landed, np.stack([xs, ys], axis=-1), atol=1e-4)


def test_forward_warp_matches_flow_on_smooth_image(seed):
    ys, xs = np.mgrid[0:40, 0:48].astype(np.float64)
    img = Image(data=np.stack([0.5 + 0.4 * np.sin(xs / 20.0), 0.5 + 0.4 * np.cos(ys / 20.0), (xs + ys) / 86.0], axis=-1))
    g = sample_motion(MotionParams(p_g=0.3, p_t=0.02), "foreground", FRAME, seed)
    warped = forward_warp(img, g)
    flow = flow_field(g, *FRAME).data
    checked = 0
    for y in range(4, FRAME[1] - 4):
        for x in range(4, FRAME[0] - 4):
            tx, ty = x + flow[y, x, 0], y + flow[y, x, 1]
            rx, ry = int(round(tx)), int(round(ty))
            if not (0 <= rx < FRAME[0] and 0 <= ry < FRAME[1]):
                continue
            if abs(tx - rx) < 0.1 and abs(ty - ry) < 0.1:
                np.testing.assert_allclose(warped.data[ry, rx], img.data[y, x], atol=2 / 255)
                checked += 1
    assert checked >= 10


def test_forward_warp_rejects_other_frame(gradient_image):
    with pytest.raises(DimensionMismatchError):
        forward_warp(gradient_image, identity_grid((10, 10)))


def test_shared_source_coordinates_give_same_rasters(seed, gradient_image):
    g = sample_motion(MotionParams(p_g=0.3), "foreground", FRAME, seed)
    mask = AlphaMask(data=np.pad(np.ones((20, 20)), ((10, 10), (14, 14))))
    sources = source_coordinates(g)
    np.testing.assert_array_equal(forward_warp(gradient_image, g, sources).data, forward_warp(gradient_image, g).data)
    np.testing.assert_array_equal(forward_warp(mask, g, sources).data, forward_warp(mask, g).data)


@pytest.mark.parametrize("kernel", [_source_coords, _displacement_at, _invert_cell])
def test_warp_kernels_release_the_gil(kernel):
    assert kernel.targetoptions.get("nogil") is True
