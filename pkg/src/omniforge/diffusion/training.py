"""Toy flow-matching training loop for :class:`TinyVelocityModel`."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np
import torch

from ..errors import ParameterError, TrainingError
from .flow import FlowSample, fm_loss, noise_sample, weighted_fm_loss
from .lora import mark_only_lora_trainable
from .model import Conditioning, ModelConfig, TinyVelocityModel


@dataclass
class TrainConfig:
    steps: int = 500
    lr: float = 1e-2
    weight_decay: float = 0.0
    batch_size: int = 4
    lora_only: bool = False
    weighted: bool = False
    seed: int = 0
    # evaluation grid for the before/after loss, midpoints of [0, 1]
    eval_points: int = 16
    model: ModelConfig = field(default_factory=ModelConfig)

    def __post_init__(self):
        if self.steps < 1 or self.batch_size < 1:
            raise ParameterError("steps and batch_size must be positive")
        if isinstance(self.model, dict):
            self.model = ModelConfig(**self.model)


@dataclass
class TrainResult:
    model: TinyVelocityModel
    losses: list[float]
    initial_loss: float
    final_loss: float


def fixed_target_dataset(
    n_samples: int = 1,
    n_views: int = 6,
    latent_hw: int = 8,
    channels: int = 4,
    seed: int = 0,
    dtype: torch.dtype = torch.float64,
) -> list[FlowSample]:
    """Samples sharing one clean latent set, each with its own fixed noise draw."""
    gen = torch.Generator().manual_seed(seed)
    shape = (n_views, latent_hw, latent_hw, channels)
    z = torch.tanh(torch.randn(shape, generator=gen, dtype=dtype))
    return [FlowSample(z, torch.randn(shape, generator=gen, dtype=dtype)) for _ in range(n_samples)]


def _batch_loss(model, samples: Sequence[FlowSample], t: torch.Tensor, cond, weighted: bool) -> torch.Tensor:
    z = torch.stack([s.z for s in samples])
    eps = torch.stack([s.eps for s in samples])
    # one t per sample, shared by all of its viewports
    z_t = noise_sample(z, eps, t)
    pred = model.velocity(z_t, t, cond)
    if weighted:
        w = torch.stack([s.weights if s.weights is not None else torch.ones_like(s.z) for s in samples])
        return weighted_fm_loss(pred, z, eps, w) / len(samples)
    return fm_loss(pred, z, eps) / len(samples)


@torch.no_grad()
def evaluate_loss(model, dataset: Sequence[FlowSample], cond=None, points: int = 16, weighted: bool = False) -> float:
    """Mean per-sample loss over the dataset on a fixed midpoint grid of t."""
    ts = (torch.arange(points, dtype=model.dtype) + 0.5) / points
    total = 0.0
    for t in ts:
        batch_t = t.expand(len(dataset))
        total += float(_batch_loss(model, dataset, batch_t, cond, weighted))
    return total / points


def train_toy(
    config: TrainConfig,
    dataset: Sequence[FlowSample],
    cond: Conditioning | None = None,
    model: TinyVelocityModel | None = None,
) -> TrainResult:
    """AdamW on the (optionally weighted) flow-matching loss.

    Raises TrainingError with the step index when the loss stops being finite.
    """
    if not dataset:
        raise ParameterError("training dataset is empty")
    model = model or TinyVelocityModel(config.model)
    if config.lora_only:
        mark_only_lora_trainable(model)
    params = [p for p in model.parameters() if p.requires_grad]
    opt = torch.optim.AdamW(params, lr=config.lr, weight_decay=config.weight_decay)
    rng = np.random.Generator(np.random.Philox(config.seed))
    dtype = model.dtype

    initial = evaluate_loss(model, dataset, cond, config.eval_points, config.weighted)
    losses = []
    for step in range(config.steps):
        idx = rng.integers(0, len(dataset), size=config.batch_size)
        # one t per step, shared by every sample and viewport in the batch
        t = torch.full((config.batch_size,), rng.uniform(0.0, 1.0), dtype=dtype)
        loss = _batch_loss(model, [dataset[i] for i in idx], t, cond, config.weighted)
        value = loss.item()
        if not math.isfinite(value):
            raise TrainingError(step, value)
        opt.zero_grad()
        loss.backward()
        opt.step()
        losses.append(value)
    final = evaluate_loss(model, dataset, cond, config.eval_points, config.weighted)
    return TrainResult(model, losses, initial, final)


def write_loss_csv(path, losses: Sequence[float]) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["step", "loss"])
        for i, v in enumerate(losses):
            w.writerow([i, repr(float(v))])
    return path


def read_loss_csv(path) -> list[float]:
    with open(path, newline="", encoding="utf-8") as fh:
        return [float(row["loss"]) for row in csv.DictReader(fh)]
