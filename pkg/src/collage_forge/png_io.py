"""PNG encode/decode for float images in [0, 1]."""

from __future__ import annotations

import io

import numpy as np
from PIL import Image


def encode_png(image: np.ndarray) -> bytes:
    """Encode an (H, W, 3) float image to 8-bit RGB PNG bytes.

    Quantization rounds half to even so it is an unbiased, reproducible
    map from [0, 1] to 0..255.
    """
    arr = np.asarray(image, dtype=np.float64)
    quantized = np.rint(np.clip(arr, 0.0, 1.0) * 255.0).astype(np.uint8)
    buf = io.BytesIO()
    Image.fromarray(quantized, mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def decode_png(data: bytes) -> np.ndarray:
    """Decode PNG bytes to an (H, W, 3) float64 image in [0, 1]."""
    with Image.open(io.BytesIO(data)) as img:
        rgb = img.convert("RGB")
        return np.asarray(rgb, dtype=np.float64) / 255.0
