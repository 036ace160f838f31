"""Low-rank adapters for linear layers."""

from __future__ import annotations

import math

import torch
import torch.nn as nn

from ..errors import DimensionError, ParameterError


class LoraLinear(nn.Module):
    """y = W x + b + (alpha / r) * B (A x).

    A is (r, d_in) with Kaiming-uniform init, B is (d_out, r) and starts at zero,
    so a fresh adapter leaves the base layer's output unchanged.
    """

    def __init__(self, d_in: int, d_out: int, rank: int = 0, alpha: float | None = None, bias: bool = True):
        super().__init__()
        if rank < 0 or rank > min(d_in, d_out):
            raise ParameterError(f"LoRA rank {rank} must lie in [0, min({d_in}, {d_out})]")
        self.d_in = d_in
        self.d_out = d_out
        self.rank = rank
        self.alpha = float(alpha if alpha is not None else rank)
        self.weight = nn.Parameter(torch.empty(d_out, d_in))
        self.bias = nn.Parameter(torch.zeros(d_out)) if bias else None
        nn.init.kaiming_uniform_(self.weight, a=math.sqrt(5))
        if rank:
            self.lora_A = nn.Parameter(torch.empty(rank, d_in))
            self.lora_B = nn.Parameter(torch.zeros(d_out, rank))
            nn.init.kaiming_uniform_(self.lora_A, a=math.sqrt(5))
        else:
            self.register_parameter("lora_A", None)
            self.register_parameter("lora_B", None)

    @property
    def scaling(self) -> float:
        return self.alpha / self.rank if self.rank else 0.0

    def forward(self, x: torch.Tensor) -> torch.Tensor:
        y = x @ self.weight.T
        if self.bias is not None:
            y = y + self.bias
        if self.rank:
            y = y + self.scaling * ((x @ self.lora_A.T) @ self.lora_B.T)
        return y

    def merged_weight(self) -> torch.Tensor:
        if not self.rank:
            return self.weight.detach().clone()
        return (self.weight + self.scaling * (self.lora_B @ self.lora_A)).detach()

    def lora_parameter_count(self) -> int:
        return self.rank * (self.d_in + self.d_out)

    def extra_repr(self) -> str:
        return f"d_in={self.d_in}, d_out={self.d_out}, rank={self.rank}, alpha={self.alpha}"


def lora_forward(x: torch.Tensor, layer: LoraLinear) -> torch.Tensor:
    """Apply a LoRA layer to a single input vector of length d_in."""
    if x.shape[-1] != layer.d_in:
        raise DimensionError(f"input has {x.shape[-1]} features, layer expects {layer.d_in}")
    y = layer.weight @ x
    if layer.bias is not None:
        y = y + layer.bias
    if layer.rank:
        y = y + layer.scaling * (layer.lora_B @ (layer.lora_A @ x))
    return y


def lora_parameters(module: nn.Module):
    for name, p in module.named_parameters():
        if name.rsplit(".", 1)[-1] in ("lora_A", "lora_B"):
            yield p


def mark_only_lora_trainable(module: nn.Module) -> int:
    """Freeze every non-LoRA parameter; returns the trainable parameter count."""
    count = 0
    for name, p in module.named_parameters():
        is_lora = name.rsplit(".", 1)[-1] in ("lora_A", "lora_B")
        p.requires_grad_(is_lora)
        count += p.numel() if is_lora else 0
    return count
