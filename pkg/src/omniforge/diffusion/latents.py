"""
Identity "latents" for the toy pipeline: area-downsampled viewport pixels.

There is no learned autoencoder; a viewport (H, W, C) maps to an (hw, hw, 4)
array in [-1, 1] by area averaging, zero-padding missing channels. Decoding
upsamples bilinearly and keeps the first three channels.
"""

from __future__ import annotations

import cv2
import numpy as np
import torch

from ..errors import DimensionError
from ..geometry import ViewportLayout
from ..projection import as_raster, split, stitch

LATENT_CHANNELS = 4


def encode_viewport(vp, latent_hw: int = 8) -> np.ndarray:
    img = as_raster(vp)
    if img.shape[2] > LATENT_CHANNELS:
        raise DimensionError(f"at most {LATENT_CHANNELS} channels, got {img.shape[2]}")
    small = cv2.resize(img, (latent_hw, latent_hw), interpolation=cv2.INTER_AREA).reshape(latent_hw, latent_hw, -1)
    out = np.zeros((latent_hw, latent_hw, LATENT_CHANNELS))
    out[..., : small.shape[2]] = small * 2.0 - 1.0
    return out


def decode_viewport(latent, res: int, channels: int = 3) -> np.ndarray:
    lat = np.asarray(latent.detach().cpu() if isinstance(latent, torch.Tensor) else latent, dtype=np.float64)
    if lat.ndim != 3 or lat.shape[2] < channels:
        raise DimensionError(f"latent must be (h, w, >={channels}), got {lat.shape}")
    img = (lat[..., :channels] + 1.0) / 2.0
    up = cv2.resize(img, (res, res), interpolation=cv2.INTER_LINEAR).reshape(res, res, channels)
    return np.clip(up, 0.0, 1.0)


def encode_erp(erp, layout: ViewportLayout, latent_hw: int = 8) -> torch.Tensor:
    """(N, hw, hw, 4) float64 latents for every viewport of ``layout``."""
    return torch.from_numpy(np.stack([encode_viewport(vp, latent_hw) for vp in split(erp, layout)]))


def decode_erp(latents, layout: ViewportLayout, erp_w: int, erp_h: int) -> np.ndarray:
    views = [decode_viewport(latents[i], spec.width) for i, spec in enumerate(layout.specs)]
    return stitch(views, layout, erp_w, erp_h)
