"""Patch-grid tiling of RGB images plus the boundary decoder.

All pipeline math operates on RawImage (packed RGB bytes); decoding from
container formats happens only at the edge so the tiling is decoder
independent.
"""

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .exceptions import ValidationError
from .hashing import mix, text_key


@dataclass(frozen=True)
class RawImage:
    width: int
    height: int
    data: bytes  # row-major RGB

    def __post_init__(self):
        if self.width < 1 or self.height < 1:
            raise ValidationError("image dimensions must be >= 1")
        expected = self.width * self.height * 3
        if len(self.data) != expected:
            raise ValidationError(
                f"buffer length {len(self.data)} != {self.width}x{self.height}x3"
            )

    def as_array(self) -> np.ndarray:
        return np.frombuffer(self.data, dtype=np.uint8).reshape(
            self.height, self.width, 3
        )


@dataclass(frozen=True)
class PatchRegion:
    x0: int
    y0: int
    w: int
    h: int
    data: bytes


@dataclass(frozen=True)
class PatchGrid:
    rows: int
    cols: int
    patches: tuple[PatchRegion, ...]  # row-major


def partition(image: RawImage, rows: int, cols: int) -> PatchGrid:
    """Tile an image into rows x cols regions covering it exactly.

    Base patch size is floor(height/rows) x floor(width/cols); remainder
    pixels go to the last row/column of patches.
    """
    if rows < 1 or cols < 1:
        raise ValidationError("grid must be at least 1x1")
    if rows > image.height or cols > image.width:
        raise ValidationError(
            f"grid {rows}x{cols} exceeds image {image.height}x{image.width}"
        )
    arr = image.as_array()
    base_h = image.height // rows
    base_w = image.width // cols
    patches = []
    for r in range(rows):
        y0 = r * base_h
        h = base_h if r < rows - 1 else image.height - y0
        for c in range(cols):
            x0 = c * base_w
            w = base_w if c < cols - 1 else image.width - x0
            block = arr[y0 : y0 + h, x0 : x0 + w, :]
            patches.append(PatchRegion(x0, y0, w, h, block.tobytes()))
    return PatchGrid(rows, cols, tuple(patches))


def reassemble(grid: PatchGrid) -> RawImage:
    """Rebuild the original image; errors on overlap or holes."""
    if not grid.patches:
        raise ValidationError("empty patch grid")
    width = max(p.x0 + p.w for p in grid.patches)
    height = max(p.y0 + p.h for p in grid.patches)
    canvas = np.zeros((height, width, 3), dtype=np.uint8)
    painted = np.zeros((height, width), dtype=bool)
    for p in grid.patches:
        if p.w < 1 or p.h < 1 or p.x0 < 0 or p.y0 < 0:
            raise ValidationError("patch region out of bounds")
        if painted[p.y0 : p.y0 + p.h, p.x0 : p.x0 + p.w].any():
            raise ValidationError("overlapping patch regions")
        block = np.frombuffer(p.data, dtype=np.uint8)
        if block.size != p.w * p.h * 3:
            raise ValidationError("patch buffer does not match its extents")
        canvas[p.y0 : p.y0 + p.h, p.x0 : p.x0 + p.w, :] = block.reshape(p.h, p.w, 3)
        painted[p.y0 : p.y0 + p.h, p.x0 : p.x0 + p.w] = True
    if not painted.all():
        raise ValidationError("patch regions do not cover the image")
    return RawImage(width, height, canvas.tobytes())


def decode_image(path: str | Path) -> RawImage:
    """Decode a raster file (PNG/JPEG/...) into a RawImage."""
    from PIL import Image

    with Image.open(path) as im:
        rgb = im.convert("RGB")
        return RawImage(rgb.width, rgb.height, rgb.tobytes())


def synthesize_image(key: str, width: int = 32, height: int = 32) -> RawImage:
    """Deterministic stand-in image derived from an opaque reference key.

    Used for desk-scale runs where the source photos are not on disk; the
    pixel field is a pure function of (key, width, height).
    """
    k = text_key(key)
    n = width * height * 3
    out = bytearray(n)
    for i in range(0, n, 8):
        word = mix(k, i).to_bytes(8, "big")
        out[i : i + 8] = word[: min(8, n - i)]
    return RawImage(width, height, bytes(out))


class ImageProvider:
    """Resolve sample image_refs to RawImage values.

    File paths (absolute, or found under images_dir) are decoded; refs
    starting with "synthetic:" are always synthesized; other opaque keys
    are synthesized only when allow_synthetic is set.
    """

    def __init__(self, images_dir: str | Path | None = None, allow_synthetic: bool = True):
        self.images_dir = Path(images_dir) if images_dir else None
        self.allow_synthetic = allow_synthetic

    def resolve(self, image_ref: str) -> RawImage:
        if image_ref.startswith("synthetic:"):
            return synthesize_image(image_ref)
        p = Path(image_ref)
        if p.exists():
            return decode_image(p)
        if self.images_dir is not None:
            candidate = self.images_dir / image_ref
            if candidate.exists():
                return decode_image(candidate)
        if self.allow_synthetic:
            return synthesize_image(image_ref)
        raise ValidationError(f"image not found for ref {image_ref!r}")
