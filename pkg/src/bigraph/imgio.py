"""Image input/output: 8-bit PNG and the lossless BIGI float container.

BIGI layout: magic ``BIGI``, u32 version=1, u32 H, u32 W, u32 C, then
little-endian f32 values in row-major order.
"""

from __future__ import annotations

import struct

import numpy as np
from PIL import Image

BIGI_MAGIC = b"BIGI"
BIGI_VERSION = 1


def write_png(image, path):
    """Write an H x W x 3 float image in [0, 1] as 8-bit RGB PNG."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    data = np.round(arr * 255.0).astype(np.uint8)
    Image.fromarray(data, mode="RGB").save(path, format="PNG")


def read_png(path):
    """Read an RGB PNG into an H x W x 3 float array in [0, 1]."""
    with Image.open(path) as img:
        arr = np.asarray(img.convert("RGB"), dtype=np.float64)
    return arr / 255.0


def write_bigi(image, path):
    arr = np.asarray(image, dtype=np.float32)
    if arr.ndim == 2:
        arr = arr[:, :, None]
    h, w, c = arr.shape
    with open(path, "wb") as fh:
        fh.write(BIGI_MAGIC)
        fh.write(struct.pack("<IIII", BIGI_VERSION, h, w, c))
        fh.write(arr.astype("<f4").tobytes(order="C"))


def read_bigi(path):
    with open(path, "rb") as fh:
        magic = fh.read(4)
        if magic != BIGI_MAGIC:
            raise ValueError(f"not a BIGI file (magic {magic!r})")
        version, h, w, c = struct.unpack("<IIII", fh.read(16))
        if version != BIGI_VERSION:
            raise ValueError(f"unsupported BIGI version {version}")
        data = np.frombuffer(fh.read(h * w * c * 4), dtype="<f4")
    if data.size != h * w * c:
        raise ValueError("truncated BIGI payload")
    return data.reshape(h, w, c).astype(np.float64)


def resize_image(image, width, height):
    """Bilinear resize of an H x W x 3 float image in [0, 1]."""
    arr = np.clip(np.asarray(image, dtype=np.float64), 0.0, 1.0)
    img = Image.fromarray((arr * 255.0).round().astype(np.uint8), mode="RGB")
    out = img.resize((width, height), resample=Image.BILINEAR)
    return np.asarray(out, dtype=np.float64) / 255.0
