import numpy as np
import pytest

from visedit.geometry import ImageBuffer
from visedit.scenes import BACKGROUND, color_for, make_scene, two_object_scene


@pytest.fixture
def dog_cat_scene() -> ImageBuffer:
    return two_object_scene()


@pytest.fixture
def three_fox_scene() -> ImageBuffer:
    return make_scene(120, 40, [
        ("fox", "square", (10, 20), 4),
        ("fox", "square", (50, 20), 4),
        ("fox", "square", (95, 20), 4),
    ])


def random_scene(rng: np.random.Generator, max_size: int = 64) -> ImageBuffer:
    """A random multi-color raster where the background is guaranteed modal."""
    w = int(rng.integers(4, max_size + 1))
    h = int(rng.integers(4, max_size + 1))
    px = np.zeros((h, w, 4), dtype=np.uint8)
    px[:, :, :3] = BACKGROUND
    px[:, :, 3] = 255
    labels = ["dog", "cat", "fox", "wolf", "pigeon"]
    n_objects = int(rng.integers(1, 5))
    for _ in range(n_objects):
        color = color_for(labels[int(rng.integers(0, len(labels)))])
        ow = int(rng.integers(1, max(2, w // 3)))
        oh = int(rng.integers(1, max(2, h // 3)))
        x0 = int(rng.integers(0, w - ow + 1))
        y0 = int(rng.integers(0, h - oh + 1))
        px[y0:y0 + oh, x0:x0 + ow, :3] = color
    return ImageBuffer(px)
