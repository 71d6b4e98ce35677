"""Five-patch decomposition of an image into normalized 256x256x3 tensors.

An image is cut into four corner patches tiling its quadrants plus one
same-sized center patch that overlaps each corner by a quarter of the
patch area (exactly so for even dimensions).  Each patch is bilinearly
resized to 256x256, scaled to [0, 1] and shifted by the backbone's
declared per-channel mean/std.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from enum import IntEnum

import numpy as np
from PIL import Image

from .dataset import ImageRecord, one_hot
from .errors import ConfigurationError, GeometryError

PATCH_SIZE = 256
NUM_CLASSES = 5


class PatchPosition(IntEnum):
    TOP_LEFT = 0
    TOP_RIGHT = 1
    BOTTOM_LEFT = 2
    BOTTOM_RIGHT = 3
    CENTER = 4


@dataclass(frozen=True)
class PatchRect:
    """Pixel rectangle: (x, y) is the top-left corner."""

    x: int
    y: int
    w: int
    h: int


@dataclass(frozen=True)
class PreprocSpec:
    """Per-channel normalization applied after scaling pixels to [0, 1]."""

    scale: str = "unit"
    mean: tuple[float, float, float] = (0.0, 0.0, 0.0)
    std: tuple[float, float, float] = (1.0, 1.0, 1.0)

    def __post_init__(self):
        if self.scale != "unit":
            raise ConfigurationError(f"unsupported preproc scale {self.scale!r}")
        if any(s == 0 for s in self.std):
            raise ConfigurationError("preproc std must be nonzero")

    @classmethod
    def identity(cls) -> "PreprocSpec":
        return cls()

    def to_json(self) -> dict:
        return {"scale": self.scale, "mean": list(self.mean), "std": list(self.std)}

    @classmethod
    def from_json(cls, doc: dict) -> "PreprocSpec":
        return cls(
            scale=doc.get("scale", "unit"),
            mean=tuple(float(v) for v in doc["mean"]),
            std=tuple(float(v) for v in doc["std"]),
        )


@dataclass
class PatchSet:
    """The five normalized patch tensors of one image plus its one-hot label."""

    image_id: str
    patches: dict[PatchPosition, np.ndarray]
    label: np.ndarray = field(repr=False)


def patch_rects(width: int, height: int) -> dict[PatchPosition, PatchRect]:
    """Compute the five patch rectangles for an image of the given size.

    Corner patches are floor(width/2) x floor(height/2); the right and
    bottom corners anchor at ceil(width/2) / ceil(height/2) so for odd
    dimensions the middle pixel row/column is left uncovered rather than
    duplicated.  The center patch has corner size and anchors at
    (floor(width/4), floor(height/4)).
    """
    if width < 2 or height < 2:
        raise GeometryError(f"image too small to patch: {width}x{height}")
    cw, ch = width // 2, height // 2
    right, bottom = (width + 1) // 2, (height + 1) // 2
    return {
        PatchPosition.TOP_LEFT: PatchRect(0, 0, cw, ch),
        PatchPosition.TOP_RIGHT: PatchRect(right, 0, cw, ch),
        PatchPosition.BOTTOM_LEFT: PatchRect(0, bottom, cw, ch),
        PatchPosition.BOTTOM_RIGHT: PatchRect(right, bottom, cw, ch),
        PatchPosition.CENTER: PatchRect(width // 4, height // 4, cw, ch),
    }


def extract_patch(image: np.ndarray, rect: PatchRect) -> np.ndarray:
    """Pixel-exact crop of ``rect`` from a decoded raster, no resampling."""
    height, width = image.shape[:2]
    if rect.x < 0 or rect.y < 0 or rect.w < 1 or rect.h < 1:
        raise GeometryError(f"degenerate rect {rect}")
    if rect.x + rect.w > width or rect.y + rect.h > height:
        raise GeometryError(f"rect {rect} outside image bounds {width}x{height}")
    return image[rect.y : rect.y + rect.h, rect.x : rect.x + rect.w].copy()


def _ensure_rgb(raster: np.ndarray) -> np.ndarray:
    """Force a (H, W, 3) uint8 layout: replicate grayscale, drop alpha."""
    if raster.dtype != np.uint8:
        raise ValueError(f"expected uint8 raster, got {raster.dtype}")
    if raster.ndim == 2:
        raster = raster[:, :, None]
    if raster.ndim != 3:
        raise ValueError(f"expected 2-D or 3-D raster, got shape {raster.shape}")
    channels = raster.shape[2]
    if channels == 1:
        return np.repeat(raster, 3, axis=2)
    if channels == 3:
        return raster
    if channels == 4:
        return raster[:, :, :3]
    raise ValueError(f"unsupported channel count {channels}")


def resize_normalize(patch: np.ndarray, preproc: PreprocSpec) -> np.ndarray:
    """Bilinearly resize a raster patch to 256x256 and normalize it.

    Pixels are scaled to [0, 1] and then transformed per channel as
    (v - mean) / std.  Returns a float32 (256, 256, 3) tensor.
    """
    if patch.size == 0:
        raise GeometryError("empty patch")
    rgb = _ensure_rgb(patch)
    resized = Image.fromarray(rgb).resize((PATCH_SIZE, PATCH_SIZE), Image.Resampling.BILINEAR)
    out = np.asarray(resized, dtype=np.float32) / np.float32(255.0)
    mean = np.asarray(preproc.mean, dtype=np.float32)
    std = np.asarray(preproc.std, dtype=np.float32)
    return (out - mean) / std


def load_image(path: str) -> np.ndarray:
    """Decode an image file to a (H, W, 3) uint8 RGB raster."""
    try:
        with Image.open(path) as im:
            return np.asarray(im.convert("RGB"), dtype=np.uint8)
    except (OSError, ValueError) as exc:
        raise ConfigurationError(f"cannot decode image {path}: {exc}") from exc


def make_patch_set(record: ImageRecord, image: np.ndarray, preproc: PreprocSpec) -> PatchSet:
    """Decompose a decoded image into its five normalized patch tensors."""
    height, width = image.shape[:2]
    if (width, height) != (record.width, record.height):
        raise GeometryError(
            f"image {record.id} is {width}x{height}, manifest says {record.width}x{record.height}"
        )
    rects = patch_rects(record.width, record.height)
    patches = {
        pos: resize_normalize(extract_patch(image, rect), preproc)
        for pos, rect in rects.items()
    }
    return PatchSet(image_id=record.id, patches=patches, label=one_hot(record.label, NUM_CLASSES))
