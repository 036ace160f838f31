"""Seeded Euler integration of the guided velocity field from noise (t=0) to data (t=1)."""

from __future__ import annotations

from typing import Callable

import torch

from .guidance import GuidanceConfig, cfg_combine
from .model import Conditioning

VelocityFn = Callable[[torch.Tensor, float, "Conditioning | None"], torch.Tensor]


def guided_velocity(velocity_fn: VelocityFn, z, t: float, cond: Conditioning | None, guidance: GuidanceConfig):
    if cond is None or not cond.items:
        return velocity_fn(z, t, cond)
    v_full = velocity_fn(z, t, cond)
    if cond.has_images and guidance.igs is not None:
        v_img = velocity_fn(z, t, cond.without_text()) if cond.has_text else v_full
        v_uncond = velocity_fn(z, t, Conditioning())
        return cfg_combine(v_uncond, v_img, v_full, guidance.gs, guidance.igs)
    v_uncond = velocity_fn(z, t, Conditioning())
    return cfg_combine(v_uncond, None, v_full, guidance.gs, None)


@torch.no_grad()
def euler_sample(
    velocity_fn: VelocityFn,
    cond: Conditioning | None,
    guidance: GuidanceConfig,
    shape: tuple[int, ...],
    seed: int,
    dtype: torch.dtype = torch.float64,
    z0: torch.Tensor | None = None,
) -> torch.Tensor:
    """z <- z + (1/T) * v(z, k/T) for k = 0..T-1, starting from seeded Gaussian noise.

    ``velocity_fn(z, t, cond)`` may be a model's ``velocity`` method or any stub.
    """
    if z0 is None:
        gen = torch.Generator().manual_seed(seed)
        z0 = torch.randn(shape, generator=gen, dtype=dtype)
    z = z0.clone()
    T = guidance.steps
    for k in range(T):
        z = z + guided_velocity(velocity_fn, z, k / T, cond, guidance) / T
    return z
