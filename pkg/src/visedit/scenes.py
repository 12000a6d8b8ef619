"""Synthetic scene construction for tests, demos, and fixtures.

Scenes are flat-color shapes from the segmenter's color table on a uniform
background, so region extraction has exact expected answers.
"""

from __future__ import annotations

import numpy as np

from .geometry import DEFAULT_LABELS, ImageBuffer

BACKGROUND = (222, 222, 210)

_COLOR_FOR_LABEL = {label: color for color, label in DEFAULT_LABELS.items()}


def color_for(label: str) -> tuple[int, int, int]:
    return _COLOR_FOR_LABEL[label]


def make_scene(width: int, height: int,
               objects: list[tuple[str, str, tuple[int, int], int]],
               background: tuple[int, int, int] = BACKGROUND) -> ImageBuffer:
    """Render labeled shapes onto a uniform background.

    ``objects`` entries are (label, shape, (cx, cy), half_extent) where shape
    is "square" or "disc".  Later objects draw over earlier ones.
    """
    px = np.zeros((height, width, 4), dtype=np.uint8)
    px[:, :, :3] = background
    px[:, :, 3] = 255
    for label, shape, (cx, cy), half in objects:
        color = color_for(label)
        if shape == "square":
            x0, x1 = max(cx - half, 0), min(cx + half, width - 1)
            y0, y1 = max(cy - half, 0), min(cy + half, height - 1)
            px[y0:y1 + 1, x0:x1 + 1, :3] = color
        elif shape == "disc":
            yy, xx = np.mgrid[0:height, 0:width]
            inside = (xx - cx) ** 2 + (yy - cy) ** 2 <= half ** 2
            px[inside, :3] = np.array(color, dtype=np.uint8)
        else:
            raise ValueError(f"unknown shape {shape!r}")
    return ImageBuffer(px)


def two_object_scene(width: int = 64, height: int = 48) -> ImageBuffer:
    """A dog square on the left and a cat square on the right."""
    return make_scene(width, height, [
        ("dog", "square", (width // 4, height // 2), min(width, height) // 6),
        ("cat", "square", (3 * width // 4, height // 2), min(width, height) // 6),
    ])
