from __future__ import annotations

import numpy as np
from PIL import Image


def write_png16(path, data):
    """Store an integer array (0..65535) as a 16-bit grayscale PNG."""
    a = np.asarray(data)
    if a.ndim != 2:
        raise ValueError("expected a 2-D array")
    if np.any(a < 0) or np.any(a > 65535):
        raise ValueError("values must fit in 16 bits")
    Image.fromarray(a.astype(np.uint16)).save(path, format="PNG")


def read_png16(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.array(im).astype(np.uint16)


def write_intensity_png(path, img):
    """Grayscale intensities in [0, 1] quantized to 16 bits."""
    write_png16(path, np.round(np.clip(img, 0.0, 1.0) * 65535))


def read_intensity_png(path) -> np.ndarray:
    return read_png16(path) / 65535.0
