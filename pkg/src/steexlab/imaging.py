"""PNG conversion for images and masks.

Images are stored as 8-bit RGB PNG; the [-1, 1] float range maps linearly
onto 0..255, so a write/read round trip is exact to within one quantization
step (1/255 per channel, i.e. ~0.0079 in normalized units).  Masks are
stored as single-channel indexed PNG whose pixel *value* is the 1-based
class index; the palette is cosmetic.
"""

from __future__ import annotations

import base64
import io
from pathlib import Path

import numpy as np
from PIL import Image

from .errors import InvalidMaskError
from .types import ImageTensor, SemanticMask

# Display palette for mask PNGs, index 0 unused (classes are 1-based).
_PALETTE_SEED = [
    (0, 0, 0),
    (110, 170, 230),  # 1
    (90, 90, 95),     # 2
    (240, 220, 60),   # 3
    (200, 60, 60),    # 4
    (170, 120, 80),   # 5
    (60, 140, 70),    # 6
    (235, 235, 235),  # 7
    (160, 80, 200),   # 8
]


def image_to_uint8(image: ImageTensor) -> np.ndarray:
    scaled = (image.pixels + 1.0) * 0.5 * 255.0
    return np.clip(np.rint(scaled), 0, 255).astype(np.uint8)


def uint8_to_image(data: np.ndarray) -> ImageTensor:
    px = data.astype(np.float32) / 255.0 * 2.0 - 1.0
    return ImageTensor(pixels=px)


def write_image_png(path: str | Path, image: ImageTensor) -> None:
    Image.fromarray(image_to_uint8(image), mode="RGB").save(str(path), format="PNG")


def read_image_png(path: str | Path) -> ImageTensor:
    with Image.open(str(path)) as img:
        data = np.asarray(img.convert("RGB"))
    return uint8_to_image(data)


def image_to_png_bytes(image: ImageTensor) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(image_to_uint8(image), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def image_from_png_bytes(data: bytes) -> ImageTensor:
    with Image.open(io.BytesIO(data)) as img:
        arr = np.asarray(img.convert("RGB"))
    return uint8_to_image(arr)


def image_to_png_base64(image: ImageTensor) -> str:
    return base64.b64encode(image_to_png_bytes(image)).decode("ascii")


def image_from_png_base64(data: str) -> ImageTensor:
    return image_from_png_bytes(base64.b64decode(data.encode("ascii")))


def _mask_palette(num_classes: int) -> list[int]:
    flat: list[int] = []
    for i in range(256):
        if i < len(_PALETTE_SEED):
            flat.extend(_PALETTE_SEED[i])
        else:
            flat.extend(((i * 67) % 256, (i * 131) % 256, (i * 197) % 256))
    return flat


def write_mask_png(path: str | Path, mask: SemanticMask) -> None:
    img = Image.fromarray(mask.labels, mode="P")
    img.putpalette(_mask_palette(mask.num_classes))
    img.save(str(path), format="PNG")


def read_mask_png(path: str | Path, num_classes: int) -> SemanticMask:
    with Image.open(str(path)) as img:
        if img.mode not in ("P", "L"):
            raise InvalidMaskError(f"mask PNG must be single-channel indexed, got mode {img.mode}")
        labels = np.asarray(img, dtype=np.uint8)
    return SemanticMask(labels=labels, num_classes=num_classes)


def mask_to_png_bytes(mask: SemanticMask) -> bytes:
    buf = io.BytesIO()
    img = Image.fromarray(mask.labels, mode="P")
    img.putpalette(_mask_palette(mask.num_classes))
    img.save(buf, format="PNG")
    return buf.getvalue()


def mask_to_png_base64(mask: SemanticMask) -> str:
    return base64.b64encode(mask_to_png_bytes(mask)).decode("ascii")
