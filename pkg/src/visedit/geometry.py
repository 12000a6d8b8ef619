"""Deterministic raster core: image buffers, region extraction, and the
position-manipulation operations (move, scale, swap, paste) plus the
onion-peel inpainting fill.

Every operation is a pure function; pixels outside an operation's declared
write set are bit-identical to its input.  Coordinates quantize with
round-half-up everywhere.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .digest import digest_hex
from .errors import (
    DegenerateResult,
    EmptyImage,
    FullyOutOfBounds,
    MaskCoversImage,
    NoForeground,
    OverlappingRegions,
    RegionFullyClipped,
    SelectorAmbiguous,
    SelectorUnresolved,
    ShapeMismatch,
)

# Color classes used by the stub segmenter on synthetic scenes.
DEFAULT_LABELS: dict[tuple[int, int, int], str] = {
    (204, 0, 0): "dog",
    (0, 102, 204): "cat",
    (240, 240, 240): "sheep",
    (230, 115, 0): "fox",
    (128, 128, 128): "wolf",
    (153, 51, 204): "pigeon",
    (102, 51, 0): "horse",
    (255, 204, 0): "duck",
    (0, 153, 76): "tree",
    (255, 102, 178): "woman",
    (40, 40, 40): "eagle",
    (0, 204, 204): "astronaut",
}


def round_half_up(x: float) -> int:
    return math.floor(x + 0.5)


@dataclass(frozen=True)
class ImageBuffer:
    """RGBA raster, 8 bits per channel, row-major (height, width, 4)."""

    pixels: np.ndarray

    def __post_init__(self):
        px = self.pixels
        if px.ndim != 3 or px.shape[2] != 4 or px.dtype != np.uint8:
            raise ShapeMismatch(f"expected (h, w, 4) uint8 array, got {px.shape} {px.dtype}")
        if px.shape[0] < 1 or px.shape[1] < 1:
            raise EmptyImage(f"image must be at least 1x1, got {px.shape[1]}x{px.shape[0]}")
        px.flags.writeable = False

    @property
    def width(self) -> int:
        return self.pixels.shape[1]

    @property
    def height(self) -> int:
        return self.pixels.shape[0]

    @property
    def size(self) -> tuple[int, int]:
        return (self.width, self.height)

    @classmethod
    def from_array(cls, array: np.ndarray) -> "ImageBuffer":
        return cls(np.ascontiguousarray(array, dtype=np.uint8).copy())

    @classmethod
    def filled(cls, width: int, height: int, rgba: tuple[int, int, int, int]) -> "ImageBuffer":
        if width < 1 or height < 1:
            raise EmptyImage(f"image must be at least 1x1, got {width}x{height}")
        return cls(np.full((height, width, 4), rgba, dtype=np.uint8))

    def digest(self) -> str:
        header = f"image|{self.width}x{self.height}|".encode()
        return digest_hex(header + self.pixels.tobytes())

    def __eq__(self, other) -> bool:
        return isinstance(other, ImageBuffer) and np.array_equal(self.pixels, other.pixels)

    def __hash__(self):
        return hash(self.digest())


@dataclass(frozen=True)
class RoI:
    """A region cut from an image: full-size bitmask, tight bounding box,
    label, centroid (mean of set-bit coordinates), and the RGBA patch of
    bbox extent whose alpha is 255 exactly on mask bits."""

    mask: np.ndarray                      # (h, w) bool, full image size
    bbox: tuple[int, int, int, int]       # x0, y0, x1, y1 inclusive
    label: str
    centroid: tuple[float, float]
    patch: np.ndarray                     # (bh, bw, 4) uint8

    def __post_init__(self):
        self.mask.flags.writeable = False
        self.patch.flags.writeable = False

    @property
    def bounds(self) -> tuple[int, int]:
        return (self.mask.shape[1], self.mask.shape[0])

    @property
    def area(self) -> int:
        return int(self.mask.sum())

    def digest(self) -> str:
        x0, y0, x1, y1 = self.bbox
        header = (f"region|{self.label}|{x0},{y0},{x1},{y1}|"
                  f"{self.centroid[0]!r},{self.centroid[1]!r}|").encode()
        return digest_hex(header + np.packbits(self.mask).tobytes() + self.patch.tobytes())

    def __eq__(self, other) -> bool:
        return (isinstance(other, RoI)
                and self.label == other.label
                and self.bbox == other.bbox
                and self.centroid == other.centroid
                and np.array_equal(self.mask, other.mask)
                and np.array_equal(self.patch, other.patch))

    def __hash__(self):
        return hash(self.digest())


def roi_from_mask(image: ImageBuffer, mask: np.ndarray, label: str) -> RoI:
    """Build an RoI from a bitmask over ``image``; patch alpha follows the mask."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (image.height, image.width):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match image {image.size}")
    ys, xs = np.nonzero(mask)
    if len(xs) == 0:
        raise DegenerateResult("mask has no set bits")
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    patch = image.pixels[y0:y1 + 1, x0:x1 + 1].copy()
    patch[:, :, 3] = np.where(mask[y0:y1 + 1, x0:x1 + 1], 255, 0)
    centroid = (float(xs.mean()), float(ys.mean()))
    return RoI(mask=mask.copy(), bbox=(x0, y0, x1, y1), label=label,
               centroid=centroid, patch=patch)


def _rebuild(mask: np.ndarray, patch_full: np.ndarray, label: str) -> RoI:
    """Rebuild an RoI from a full-size mask and full-size RGBA content array."""
    ys, xs = np.nonzero(mask)
    x0, x1 = int(xs.min()), int(xs.max())
    y0, y1 = int(ys.min()), int(ys.max())
    patch = patch_full[y0:y1 + 1, x0:x1 + 1].copy()
    patch[:, :, 3] = np.where(mask[y0:y1 + 1, x0:x1 + 1], 255, 0)
    return RoI(mask=mask, bbox=(x0, y0, x1, y1), label=label,
               centroid=(float(xs.mean()), float(ys.mean())), patch=patch)


# --- segmentation ------------------------------------------------------------

def segment_components(image: ImageBuffer,
                       labels: dict[tuple[int, int, int], str] | None = None) -> list[RoI]:
    """Split the image into 4-connected same-color components.

    The modal RGB color is the background; every other color class yields one
    RoI per connected component.  Result is sorted by centroid x, then
    centroid y, then first-pixel scan order.
    """
    if labels is None:
        labels = DEFAULT_LABELS
    rgb = image.pixels[:, :, :3]
    flat = rgb.reshape(-1, 3)
    colors, inverse, counts = np.unique(flat, axis=0, return_inverse=True, return_counts=True)
    if len(colors) == 1:
        raise NoForeground("image is a single color class")
    background_idx = int(counts.argmax())

    class_map = inverse.reshape(image.height, image.width)
    rois: list[tuple[tuple, RoI]] = []
    for color_idx in range(len(colors)):
        if color_idx == background_idx:
            continue
        color = tuple(int(c) for c in colors[color_idx])
        label = labels.get(color, "#%02x%02x%02x" % color)
        class_mask = class_map == color_idx
        labeled, count = ndimage.label(class_mask)  # default structure is 4-connected
        for comp in range(1, count + 1):
            mask = labeled == comp
            roi = roi_from_mask(image, mask, label)
            ys, xs = np.nonzero(mask)
            first_scan = int(ys[0]) * image.width + int(xs[0])
            rois.append(((roi.centroid[0], roi.centroid[1], first_scan), roi))
    rois.sort(key=lambda item: item[0])
    return [roi for _, roi in rois]


def resolve_selector(rois: list[RoI], selector) -> RoI:
    """Pick one RoI from a centroid-x-sorted list per the selector's predicate."""
    matches = [r for r in rois if r.label.lower() == selector.class_name.lower()]
    if not matches:
        raise SelectorUnresolved(f"no region labeled {selector.class_name!r}")
    pos = selector.positional
    if pos == "left":
        return matches[0]
    if pos == "right":
        return matches[-1]
    if pos == "middle":
        return matches[len(matches) // 2]
    if pos == "far-left":
        return min(matches, key=lambda r: r.centroid[0])
    if pos == "far-right":
        return max(matches, key=lambda r: r.centroid[0])
    if pos == "index":
        if selector.index is None or not (0 <= selector.index < len(matches)):
            raise SelectorUnresolved(
                f"index {selector.index} out of range for {len(matches)} "
                f"{selector.class_name!r} regions")
        return matches[selector.index]
    # "all" must resolve to exactly one region
    if len(matches) > 1:
        raise SelectorAmbiguous(
            f"{len(matches)} regions labeled {selector.class_name!r}; "
            "add a positional word")
    return matches[0]


# --- inpainting --------------------------------------------------------------

def inpaint_fill(image: ImageBuffer, mask: np.ndarray) -> ImageBuffer:
    """Onion-peel fill: wave by wave, each masked pixel bordering the known
    region takes the rounded mean RGB of its known 4-neighbors (alpha 255).
    Pixels within one wave see only values from previous waves."""
    mask = np.asarray(mask, dtype=bool)
    if mask.shape != (image.height, image.width):
        raise ShapeMismatch(f"mask shape {mask.shape} does not match image {image.size}")
    if not mask.any():
        return image  # nothing to fill
    if mask.all():
        raise MaskCoversImage("mask leaves no source pixels")

    out = image.pixels.copy()
    known = ~mask
    rgb = out[:, :, :3].astype(np.int64)

    while not known.all():
        padded = np.pad(known, 1)
        padded_rgb = np.pad(rgb, ((1, 1), (1, 1), (0, 0)))
        neighbor_known = np.zeros_like(known, dtype=np.int64)
        neighbor_sum = np.zeros((image.height, image.width, 3), dtype=np.int64)
        for dy, dx in ((-1, 0), (1, 0), (0, -1), (0, 1)):
            shifted_known = padded[1 + dy:1 + dy + image.height, 1 + dx:1 + dx + image.width]
            neighbor_known += shifted_known
            shifted_rgb = padded_rgb[1 + dy:1 + dy + image.height, 1 + dx:1 + dx + image.width]
            neighbor_sum += shifted_rgb * shifted_known[:, :, None]
        frontier = ~known & (neighbor_known > 0)
        counts = neighbor_known[frontier][:, None]
        # integer round-half-up of sum/count
        rgb[frontier] = (2 * neighbor_sum[frontier] + counts) // (2 * counts)
        known |= frontier

    out[:, :, :3] = rgb.astype(np.uint8)
    out[:, :, 3] = np.where(mask, 255, out[:, :, 3])
    return ImageBuffer(out)


# --- position manipulation ---------------------------------------------------

_DIRECTIONS = {"left": (-1, 0), "right": (1, 0), "up": (0, -1), "down": (0, 1)}


def move_roi(roi: RoI, direction: str, amount: int, bounds: tuple[int, int]) -> RoI:
    """Translate the region by ``amount`` pixels, clipping at ``bounds``."""
    key = direction.lower()
    if key not in _DIRECTIONS:
        raise ShapeMismatch(f"unknown direction {direction!r}")
    if amount < 0:
        raise ShapeMismatch("move amount must be >= 0")
    w, h = bounds
    if roi.mask.shape != (h, w):
        raise ShapeMismatch(f"bounds {bounds} do not match region canvas {roi.bounds}")
    ux, uy = _DIRECTIONS[key]
    dx, dy = ux * amount, uy * amount

    ys, xs = np.nonzero(roi.mask)
    nxs, nys = xs + dx, ys + dy
    keep = (nxs >= 0) & (nxs < w) & (nys >= 0) & (nys < h)
    if not keep.any():
        raise RegionFullyClipped(f"moving {key} by {amount} leaves no pixels in bounds")

    new_mask = np.zeros_like(roi.mask)
    new_mask[nys[keep], nxs[keep]] = True
    content = np.zeros((h, w, 4), dtype=np.uint8)
    x0, y0, _, _ = roi.bbox
    content[nys[keep], nxs[keep]] = roi.patch[ys[keep] - y0, xs[keep] - x0]
    return _rebuild(new_mask, content, roi.label)


def scale_roi(roi: RoI, factor: float, bounds: tuple[int, int]) -> RoI:
    """Nearest-neighbor rescale about the centroid; bbox dims round half up."""
    if factor <= 0:
        raise DegenerateResult("scale factor must be > 0")
    w, h = bounds
    if roi.mask.shape != (h, w):
        raise ShapeMismatch(f"bounds {bounds} do not match region canvas {roi.bounds}")
    x0, y0, x1, y1 = roi.bbox
    w0, h0 = x1 - x0 + 1, y1 - y0 + 1
    w1, h1 = round_half_up(w0 * factor), round_half_up(h0 * factor)
    if w1 < 1 or h1 < 1:
        raise DegenerateResult(f"scaled extent {w1}x{h1} is empty")

    # nearest-neighbor via pixel-center source indices
    sx = np.minimum((np.arange(w1) + 0.5) * w0 / w1, w0 - 1).astype(np.int64)
    sy = np.minimum((np.arange(h1) + 0.5) * h0 / h1, h0 - 1).astype(np.int64)
    scaled_patch = roi.patch[sy[:, None], sx[None, :]]
    box_mask = roi.mask[y0:y1 + 1, x0:x1 + 1]
    scaled_mask = box_mask[sy[:, None], sx[None, :]]

    cx, cy = roi.centroid
    nx0 = round_half_up(cx + (x0 - cx) * factor)
    ny0 = round_half_up(cy + (y0 - cy) * factor)

    # clip the scaled box to bounds
    cx0, cy0 = max(nx0, 0), max(ny0, 0)
    cx1, cy1 = min(nx0 + w1 - 1, w - 1), min(ny0 + h1 - 1, h - 1)
    if cx0 > cx1 or cy0 > cy1:
        raise DegenerateResult("scaled region lies entirely outside bounds")
    sub_mask = scaled_mask[cy0 - ny0:cy1 - ny0 + 1, cx0 - nx0:cx1 - nx0 + 1]
    if not sub_mask.any():
        raise DegenerateResult("scaled region mask is empty after clipping")

    new_mask = np.zeros_like(roi.mask)
    new_mask[cy0:cy1 + 1, cx0:cx1 + 1] = sub_mask
    content = np.zeros((h, w, 4), dtype=np.uint8)
    content[cy0:cy1 + 1, cx0:cx1 + 1] = scaled_patch[cy0 - ny0:cy1 - ny0 + 1,
                                                     cx0 - nx0:cx1 - nx0 + 1]
    return _rebuild(new_mask, content, roi.label)


def paste(background: ImageBuffer, roi: RoI,
          at: tuple[float, float] | None = None) -> ImageBuffer:
    """Alpha-over composite of the region's patch onto ``background``.

    The patch is placed so the region's centroid lands on ``at`` (default:
    its own centroid, i.e. back where it came from)."""
    target = at if at is not None else roi.centroid
    dx = round_half_up(target[0] - roi.centroid[0])
    dy = round_half_up(target[1] - roi.centroid[1])
    x0, y0, x1, y1 = roi.bbox
    px0, py0 = x0 + dx, y0 + dy
    px1, py1 = x1 + dx, y1 + dy

    w, h = background.size
    ix0, iy0 = max(px0, 0), max(py0, 0)
    ix1, iy1 = min(px1, w - 1), min(py1, h - 1)
    if ix0 > ix1 or iy0 > iy1:
        raise FullyOutOfBounds(f"patch placed at ({px0},{py0}) misses the image")

    out = background.pixels.copy()
    patch = roi.patch[iy0 - py0:iy1 - py0 + 1, ix0 - px0:ix1 - px0 + 1]
    bg = out[iy0:iy1 + 1, ix0:ix1 + 1]
    alpha = patch[:, :, 3:4].astype(np.int64)
    top = patch[:, :, :3].astype(np.int64)
    base = bg[:, :, :3].astype(np.int64)
    mixed = (top * alpha + base * (255 - alpha) + 127) // 255
    bg[:, :, :3] = mixed.astype(np.uint8)
    out[iy0:iy1 + 1, ix0:ix1 + 1] = bg
    return ImageBuffer(out)


def swap_rois(image: ImageBuffer, a: RoI, b: RoI) -> ImageBuffer:
    """Exchange two disjoint regions: fill both holes, then paste each patch
    centered on the other's centroid (``a`` first; later paste wins)."""
    if a.mask.shape != b.mask.shape or a.mask.shape != (image.height, image.width):
        raise ShapeMismatch("regions and image must share one canvas")
    if (a.mask & b.mask).any():
        raise OverlappingRegions("regions overlap")
    filled = inpaint_fill(image, a.mask | b.mask)
    out = paste(filled, a, at=b.centroid)
    return paste(out, b, at=a.centroid)
