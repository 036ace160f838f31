"""PNG read/write for [0, 1] rasters (8/16-bit) and binary masks (1-bit)."""

from __future__ import annotations

from pathlib import Path

import cv2
import numpy as np
from PIL import Image

from .errors import DimensionError
from .geometry import check_erp_dims
from .projection import as_raster


def read_png(path) -> np.ndarray:
    """Load a PNG as float64 (H, W, C) in [0, 1], RGB(A) channel order."""
    path = Path(path)
    data = cv2.imread(str(path), cv2.IMREAD_UNCHANGED)
    if data is None:
        raise OSError(f"cannot read image {path}")
    if data.ndim == 2:
        data = data[..., None]
    elif data.shape[2] == 3:
        data = cv2.cvtColor(data, cv2.COLOR_BGR2RGB)
    elif data.shape[2] == 4:
        data = cv2.cvtColor(data, cv2.COLOR_BGRA2RGBA)
    if data.dtype == np.uint8:
        scale = 255.0
    elif data.dtype == np.uint16:
        scale = 65535.0
    else:
        raise DimensionError(f"unsupported PNG sample type {data.dtype} in {path}")
    return data.astype(np.float64) / scale


def write_png(path, img, bits: int = 8) -> Path:
    if bits not in (8, 16):
        raise ValueError(f"bits must be 8 or 16, got {bits}")
    path = Path(path)
    a = as_raster(img)
    peak = 255 if bits == 8 else 65535
    q = np.rint(np.clip(a, 0.0, 1.0) * peak).astype(np.uint8 if bits == 8 else np.uint16)
    if q.shape[2] == 1:
        q = q[..., 0]
    elif q.shape[2] == 3:
        q = cv2.cvtColor(q, cv2.COLOR_RGB2BGR)
    elif q.shape[2] == 4:
        q = cv2.cvtColor(q, cv2.COLOR_RGBA2BGRA)
    else:
        raise DimensionError("2-channel rasters cannot be stored as PNG")
    path.parent.mkdir(parents=True, exist_ok=True)
    if not cv2.imwrite(str(path), q):
        raise OSError(f"cannot write image {path}")
    return path


def read_erp(path) -> np.ndarray:
    img = read_png(path)
    check_erp_dims(img.shape[1], img.shape[0])
    return img


def write_mask_png(path, mask) -> Path:
    path = Path(path)
    bits = np.asarray(mask, dtype=bool)
    path.parent.mkdir(parents=True, exist_ok=True)
    Image.fromarray(bits).convert("1").save(path, optimize=False)
    return path


def read_mask_png(path) -> np.ndarray:
    with Image.open(path) as im:
        return np.asarray(im.convert("1"), dtype=bool)
