"""
Tiny velocity transformer over an interleaved condition + viewport-token sequence.

Sequence: [condition items in order] [timestep token] [N viewports x T tokens].
Pre-norm blocks with masked multi-head attention; the output block is decoded by
an adaLN-modulated final layer (shift/scale from the timestep embedding).
Every linear layer inside the transformer and the final projection carries a
LoRA adapter.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, field
from functools import lru_cache

import numpy as np
import torch
import torch.nn as nn
import torch.nn.functional as F

from ..errors import DimensionError, ParameterError
from .lora import LoraLinear
from .tokens import PATCH, SegmentLayout, build_attention_mask, hash_token_ids, make_layout, patchify, unpatchify

_DTYPES = {"float32": torch.float32, "float64": torch.float64}


@dataclass
class ModelConfig:
    dim: int = 32
    layers: int = 2
    heads: int = 4
    mlp_ratio: int = 4
    patch: int = PATCH
    channels: int = 4
    latent_hw: int = 8
    n_views: int = 6
    vocab: int = 1024
    lora_rank: int = 16
    lora_alpha: float = 16.0
    zero_init_head: bool = True
    # attention-mask ablations
    bidirectional: bool = True
    per_viewport_blocks: bool = False
    cond_bidirectional: bool = True
    dtype: str = "float64"
    seed: int = 0

    def __post_init__(self):
        if self.dim % self.heads:
            raise ParameterError(f"dim {self.dim} is not divisible by {self.heads} heads")
        if self.latent_hw % self.patch:
            raise ParameterError(f"latent size {self.latent_hw} is not divisible by patch {self.patch}")
        if self.dtype not in _DTYPES:
            raise ParameterError(f"dtype must be one of {sorted(_DTYPES)}")

    @property
    def token_dim(self) -> int:
        return self.patch * self.patch * self.channels

    @property
    def tokens_per_view(self) -> int:
        return (self.latent_hw // self.patch) ** 2

    @property
    def torch_dtype(self) -> torch.dtype:
        return _DTYPES[self.dtype]

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class Conditioning:
    """Interleaved condition items: ``("text", str)`` or ``("image", latent (h, w, c))``."""

    items: list = field(default_factory=list)

    def __post_init__(self):
        for kind, _ in self.items:
            if kind not in ("text", "image"):
                raise ParameterError(f"condition items must be text or image, got {kind!r}")

    @property
    def has_text(self) -> bool:
        return any(k == "text" for k, _ in self.items)

    @property
    def has_images(self) -> bool:
        return any(k == "image" for k, _ in self.items)

    def without_text(self) -> "Conditioning":
        return Conditioning([it for it in self.items if it[0] != "text"])

    def without_images(self) -> "Conditioning":
        return Conditioning([it for it in self.items if it[0] != "image"])


def sinusoidal_embedding(x: torch.Tensor, dim: int, max_period: float = 10000.0) -> torch.Tensor:
    half = dim // 2
    freqs = torch.exp(-math.log(max_period) * torch.arange(half, dtype=x.dtype) / half)
    args = x[..., None] * freqs
    emb = torch.cat([torch.cos(args), torch.sin(args)], dim=-1)
    if dim % 2:
        emb = torch.cat([emb, torch.zeros_like(emb[..., :1])], dim=-1)
    return emb


class Attention(nn.Module):
    def __init__(self, dim: int, heads: int, rank: int, alpha: float):
        super().__init__()
        self.heads = heads
        self.q = LoraLinear(dim, dim, rank, alpha)
        self.k = LoraLinear(dim, dim, rank, alpha)
        self.v = LoraLinear(dim, dim, rank, alpha)
        self.proj = LoraLinear(dim, dim, rank, alpha)

    def forward(self, x: torch.Tensor, mask: torch.Tensor) -> torch.Tensor:
        B, n, d = x.shape
        hd = d // self.heads
        q = self.q(x).view(B, n, self.heads, hd).transpose(1, 2)
        k = self.k(x).view(B, n, self.heads, hd).transpose(1, 2)
        v = self.v(x).view(B, n, self.heads, hd).transpose(1, 2)
        logits = (q @ k.transpose(-2, -1)) / math.sqrt(hd)
        logits = logits.masked_fill(~mask, float("-inf"))
        out = torch.softmax(logits, dim=-1) @ v
        return self.proj(out.transpose(1, 2).reshape(B, n, d))


class Block(nn.Module):
    def __init__(self, dim: int, heads: int, mlp_ratio: int, rank: int, alpha: float):
        super().__init__()
        self.norm1 = nn.LayerNorm(dim)
        self.attn = Attention(dim, heads, rank, alpha)
        self.norm2 = nn.LayerNorm(dim)
        self.fc1 = LoraLinear(dim, dim * mlp_ratio, rank, alpha)
        self.fc2 = LoraLinear(dim * mlp_ratio, dim, rank, alpha)

    def forward(self, x, mask):
        x = x + self.attn(self.norm1(x), mask)
        return x + self.fc2(F.gelu(self.fc1(self.norm2(x)), approximate="tanh"))


class FinalLayer(nn.Module):
    """adaLN-modulated LayerNorm followed by a linear map to patch values."""

    def __init__(self, dim: int, out_dim: int, rank: int, alpha: float, zero_init: bool):
        super().__init__()
        self.norm = nn.LayerNorm(dim, elementwise_affine=False, eps=1e-6)
        self.modulation = nn.Linear(dim, 2 * dim)
        self.linear = LoraLinear(dim, out_dim, min(rank, dim, out_dim), alpha)
        if zero_init:
            nn.init.zeros_(self.linear.weight)
            nn.init.zeros_(self.linear.bias)

    def forward(self, x, c):
        shift, scale = self.modulation(F.silu(c)).chunk(2, dim=-1)
        x = self.norm(x) * (1 + scale[:, None]) + shift[:, None]
        return self.linear(x)


class TinyVelocityModel(nn.Module):
    def __init__(self, config: ModelConfig | None = None):
        super().__init__()
        cfg = config or ModelConfig()
        self.config = cfg
        gen = torch.Generator().manual_seed(cfg.seed)
        with torch.random.fork_rng(devices=[]):
            torch.manual_seed(cfg.seed)
            self.patch_embed = nn.Linear(cfg.token_dim, cfg.dim)
            self.time_mlp = nn.Sequential(nn.Linear(cfg.dim, cfg.dim), nn.SiLU(), nn.Linear(cfg.dim, cfg.dim))
            self.blocks = nn.ModuleList(
                Block(cfg.dim, cfg.heads, cfg.mlp_ratio, cfg.lora_rank, cfg.lora_alpha) for _ in range(cfg.layers)
            )
            self.final = FinalLayer(cfg.dim, cfg.token_dim, cfg.lora_rank, cfg.lora_alpha, cfg.zero_init_head)
        # fixed hash-bucket text embeddings, not trained
        self.register_buffer("text_table", torch.randn(cfg.vocab, cfg.dim, generator=gen) / math.sqrt(cfg.dim))
        self.to(cfg.torch_dtype)

    @property
    def dtype(self) -> torch.dtype:
        return self.config.torch_dtype

    def layout_for(self, cond: Conditioning | None) -> SegmentLayout:
        cfg = self.config
        items = [(k, self._item_len(k, v)) for k, v in (cond.items if cond else [])]
        return _cached_layout(tuple(items), cfg.n_views, cfg.tokens_per_view, cfg.cond_bidirectional, cfg.bidirectional)

    def attention_mask(self, layout: SegmentLayout) -> torch.Tensor:
        return torch.from_numpy(build_attention_mask(layout, self.config.per_viewport_blocks))

    def _item_len(self, kind, value) -> int:
        if kind == "text":
            return max(len(hash_token_ids(value, self.config.vocab)), 1)
        h, w = value.shape[-3], value.shape[-2]
        return (h // self.config.patch) * (w // self.config.patch)

    def _embed_condition(self, kind, value, batch: int) -> torch.Tensor:
        if kind == "text":
            ids = hash_token_ids(value, self.config.vocab) or [0]
            emb = self.text_table[torch.tensor(ids)]
        else:
            tokens = patchify(torch.as_tensor(value, dtype=self.dtype), self.config.patch)
            emb = self.patch_embed(tokens)
        return emb.expand(batch, -1, -1)

    def forward(self, x: torch.Tensor, t, cond: Conditioning | None = None, mask: torch.Tensor | None = None) -> torch.Tensor:
        """Predict velocities for the output block.

        Args:
            x: noised output tokens (B, N*T, p*p*c).
            t: time in [0, 1], scalar or (B,).
            cond: interleaved conditions shared by the batch.
            mask: optional (n, n) boolean override of the layout-derived mask.

        Returns:
            (B, N*T, p*p*c) velocity tokens.
        """
        cfg = self.config
        B, n_out, td = x.shape
        if td != cfg.token_dim or n_out != cfg.n_views * cfg.tokens_per_view:
            raise DimensionError(
                f"expected output tokens ({cfg.n_views * cfg.tokens_per_view}, {cfg.token_dim}), got ({n_out}, {td})"
            )
        t = torch.as_tensor(t, dtype=self.dtype)
        t = t.expand(B) if t.ndim == 0 else t
        if torch.any((t < 0) | (t > 1)):
            raise ParameterError("t must lie in [0, 1]")
        layout = self.layout_for(cond)
        if mask is None:
            mask = self.attention_mask(layout)
        elif tuple(mask.shape) != (layout.n_tokens, layout.n_tokens):
            raise DimensionError(f"mask is {tuple(mask.shape)}, sequence has {layout.n_tokens} tokens")

        t_emb = self.time_mlp(sinusoidal_embedding(t * 1000.0, cfg.dim))
        parts = [self._embed_condition(k, v, B) for k, v in (cond.items if cond else [])]
        parts.append(t_emb[:, None])
        parts.append(self.patch_embed(x))
        h = torch.cat(parts, dim=1)
        pos = sinusoidal_embedding(torch.arange(h.shape[1], dtype=self.dtype), cfg.dim)
        h = h + pos
        for blk in self.blocks:
            h = blk(h, mask)
        start, stop = layout.output_span()
        return self.final(h[:, start:stop], t_emb)

    def velocity(self, z: torch.Tensor, t, cond: Conditioning | None = None) -> torch.Tensor:
        """Velocity for viewport latents shaped (N, h, w, c) or (B, N, h, w, c)."""
        cfg = self.config
        single = z.ndim == 4
        zb = z[None] if single else z
        B, N, hh, ww, _ = zb.shape
        tokens = patchify(zb.to(self.dtype), cfg.patch).reshape(B, N * cfg.tokens_per_view, cfg.token_dim)
        out = self.forward(tokens, t, cond)
        v = unpatchify(out.reshape(B, N, cfg.tokens_per_view, cfg.token_dim), hh, ww, cfg.patch)
        return v[0] if single else v


def model_forward(model: TinyVelocityModel, tokens: torch.Tensor, mask, t, cond: Conditioning | None = None) -> torch.Tensor:
    """Functional form of :meth:`TinyVelocityModel.forward` with an explicit mask."""
    m = torch.as_tensor(np.asarray(mask, dtype=bool)) if not isinstance(mask, torch.Tensor) else mask
    single = tokens.ndim == 2
    out = model(tokens[None] if single else tokens, t, cond, m)
    return out[0] if single else out


@lru_cache(maxsize=64)
def _cached_layout(items, n_views, tokens_per_view, cond_bidirectional, bidirectional) -> SegmentLayout:
    return make_layout(list(items), n_views, tokens_per_view, cond_bidirectional=cond_bidirectional, bidirectional=bidirectional)
