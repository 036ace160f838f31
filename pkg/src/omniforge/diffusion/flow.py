"""
Linear-path flow matching over a set of viewport latents.

Latent sets are shaped (..., N, h, w, c). Every function here works on numpy
arrays and torch tensors alike.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import torch

from ..errors import DimensionError, ParameterError
from .tokens import PATCH, patchify, unpatchify

# tasks trained with the region-weighted loss; everything else (including decoration) uses the plain loss
WEIGHTED_TASKS = frozenset({"object_editing", "light_modify"})


def _check_same(*arrays) -> None:
    shape = tuple(arrays[0].shape)
    for a in arrays[1:]:
        if tuple(a.shape) != shape:
            raise DimensionError(f"shape mismatch: {shape} vs {tuple(a.shape)}")


def noise_sample(z, eps, t):
    """z_t = t * z + (1 - t) * eps, applied to every viewport.

    ``t`` is a scalar or broadcastable against the leading (batch) axes.
    """
    _check_same(z, eps)
    if isinstance(t, (torch.Tensor, np.ndarray)):
        t = t.reshape(tuple(t.shape) + (1,) * (z.ndim - t.ndim))
    elif not 0.0 <= t <= 1.0:
        raise ParameterError(f"t must lie in [0, 1], got {t}")
    return t * z + (1 - t) * eps


def velocity_target(z, eps):
    _check_same(z, eps)
    return z - eps


def fm_loss(pred, z, eps):
    """sum_i ||(z_i - eps_i) - pred_i||^2 over all viewports and elements."""
    _check_same(pred, z, eps)
    r = (z - eps) - pred
    return (r * r).sum()


def weighted_fm_loss(pred, z, eps, weights):
    _check_same(pred, z, eps, weights)
    if (weights < 0).any():
        raise ParameterError("loss weights must be non-negative")
    r = (z - eps) - pred
    return (weights * (r * r)).sum()


def edit_weight_map(input_latent, target_latent, base_w: float = 1.0, boost_w: float = 5.0, thresh: float = 0.05, p: int = PATCH):
    """Per-element weights that boost patches where the target departs from the input.

    A patch whose mean absolute difference exceeds ``thresh`` gets ``boost_w`` on
    all of its elements, every other patch gets ``base_w``.
    """
    _check_same(input_latent, target_latent)
    if not (boost_w >= base_w > 0):
        raise ParameterError(f"need boost_w >= base_w > 0, got base {base_w}, boost {boost_w}")
    h, w = input_latent.shape[-3], input_latent.shape[-2]
    diff = patchify(abs(input_latent - target_latent), p)
    boosted = diff.mean(-1) > thresh
    if isinstance(diff, torch.Tensor):
        per_patch = torch.where(boosted, boost_w, base_w).to(diff.dtype)
        weights = per_patch[..., None].expand_as(diff).contiguous()
    else:
        weights = np.repeat(np.where(boosted, boost_w, base_w)[..., None], diff.shape[-1], axis=-1)
    return unpatchify(weights, h, w, p)


def task_loss_weights(task: str, input_latent, target_latent, **kw):
    """Weights for ``task``, or None when the plain loss applies."""
    if task not in WEIGHTED_TASKS:
        return None
    return edit_weight_map(input_latent, target_latent, **kw)


@dataclass
class FlowSample:
    """One training point: clean latents and paired noise for N viewports.

    ``t``/``z_t``/``target`` are filled by :meth:`at`; training draws a fresh t
    per step and shares it across the sample's viewports.
    """

    z: torch.Tensor
    eps: torch.Tensor
    t: float | None = None
    z_t: torch.Tensor | None = None
    target: torch.Tensor | None = None
    weights: torch.Tensor | None = None

    def __post_init__(self):
        _check_same(self.z, self.eps)
        if self.weights is not None:
            _check_same(self.z, self.weights)

    def at(self, t: float) -> "FlowSample":
        return FlowSample(self.z, self.eps, t, noise_sample(self.z, self.eps, t), velocity_target(self.z, self.eps), self.weights)
