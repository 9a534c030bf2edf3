"""Binary PGM (P5, 8-bit) reading and writing."""

from __future__ import annotations

from pathlib import Path

import numpy as np
from PIL import Image

from .errors import FormatError


def read_pgm(path: str | Path) -> np.ndarray:
    """Load an 8-bit grayscale PGM as a (height, width) uint8 array."""
    with Image.open(path) as im:
        if im.format != "PPM" or im.mode != "L":
            raise FormatError(f"{path}: expected 8-bit P5 PGM, got {im.format}/{im.mode}")
        return np.asarray(im, dtype=np.uint8).copy()


def write_pgm(path: str | Path, pixels: np.ndarray | bytes, width: int | None = None, height: int | None = None) -> None:
    if isinstance(pixels, (bytes, bytearray)):
        if width is None or height is None:
            raise ValueError("width and height are required for raw bytes")
        arr = np.frombuffer(bytes(pixels), dtype=np.uint8).reshape(height, width)
    else:
        arr = np.asarray(pixels, dtype=np.uint8)
    Image.fromarray(arr, mode="L").save(path, format="PPM")
