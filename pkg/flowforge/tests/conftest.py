import numpy as np
import pytest
from PIL import Image as PILImage

from flowforge.core.raster import Image
from flowforge.models.hyperparams import EffectsParams, HyperParams
from flowforge.services.scene_service import AppearancePool


def _texture(seed: int, w: int = 40, h: int = 30) -> Image:
    """Smooth random texture so warps and blurs have something to move."""
    gen = np.random.default_rng(seed)
    ys, xs = np.mgrid[0:h, 0:w].astype(np.float64)
    channels = []
    for _ in range(3):
        fx, fy, phase = gen.uniform(0.1, 0.5), gen.uniform(0.1, 0.5), gen.uniform(0, 2 * np.pi)
        channels.append(0.5 + 0.45 * np.sin(fx * xs + fy * ys + phase))
    return Image(data=np.stack(channels, axis=-1))


@pytest.fixture
def small_frame():
    return (32, 24)


@pytest.fixture
def texture():
    """Factory: texture(seed, w, h) -> Image."""
    return _texture


@pytest.fixture
def pool():
    return AppearancePool.from_images([_texture(i) for i in range(6)])


@pytest.fixture
def appearance_dir(tmp_path):
    d = tmp_path / "appearance"
    d.mkdir()
    for i in range(4):
        arr = np.round(_texture(i).data * 255).astype(np.uint8)
        PILImage.fromarray(arr, mode="RGB").save(d / f"img_{i:02d}.png")
    return d


@pytest.fixture
def small_hyperparams(small_frame):
    return HyperParams(resolution=small_frame, fg_count_min=2, fg_count_max=2)


@pytest.fixture
def no_effects():
    return EffectsParams(enabled=False)
