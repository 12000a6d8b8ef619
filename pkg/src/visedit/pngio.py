"""PNG ingress/egress for ImageBuffer (8-bit RGBA)."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image

from .errors import BadImage
from .geometry import ImageBuffer


def decode_png(data: bytes) -> ImageBuffer:
    try:
        with Image.open(io.BytesIO(data)) as img:
            rgba = img.convert("RGBA")
            array = np.asarray(rgba, dtype=np.uint8)
    except Exception as exc:
        raise BadImage(f"not a decodable image: {exc}") from exc
    return ImageBuffer.from_array(array)


def encode_png(image: ImageBuffer) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(np.asarray(image.pixels), mode="RGBA").save(buf, format="PNG")
    return buf.getvalue()


def read_png(path) -> ImageBuffer:
    with open(path, "rb") as fh:
        return decode_png(fh.read())


def write_png(image: ImageBuffer, path) -> None:
    with open(path, "wb") as fh:
        fh.write(encode_png(image))
