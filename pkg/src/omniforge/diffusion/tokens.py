"""
Patch tokenization, interleaved segment layouts and the viewport-block attention mask.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass
from typing import Sequence

import numpy as np
from einops import rearrange

from ..errors import DimensionError, ParameterError

SEGMENT_KINDS = ("text", "timestep", "cond_image", "output")
PATCH = 2


def patchify(latent, p: int = PATCH):
    """(..., h, w, c) -> (..., (h/p)*(w/p), p*p*c); row-major patches, channels fastest.

    Works on numpy arrays and torch tensors.
    """
    h, w = latent.shape[-3], latent.shape[-2]
    if h % p or w % p:
        raise DimensionError(f"latent {h}x{w} is not divisible by patch size {p}")
    return rearrange(latent, "... (hp p1) (wp p2) c -> ... (hp wp) (p1 p2 c)", p1=p, p2=p)


def unpatchify(tokens, h: int, w: int, p: int = PATCH):
    if h % p or w % p:
        raise DimensionError(f"latent {h}x{w} is not divisible by patch size {p}")
    if tokens.shape[-2] != (h // p) * (w // p):
        raise DimensionError(f"{tokens.shape[-2]} tokens cannot tile a {h}x{w} latent with patch {p}")
    return rearrange(tokens, "... (hp wp) (p1 p2 c) -> ... (hp p1) (wp p2) c", hp=h // p, p1=p, p2=p)


@dataclass(frozen=True)
class Segment:
    kind: str
    length: int
    # segments sharing a block id attend to each other bidirectionally;
    # None keeps the segment purely causal
    block_id: int | None = None
    # output segments only: how many viewports the tokens span
    views: int = 1

    def __post_init__(self):
        if self.kind not in SEGMENT_KINDS:
            raise ParameterError(f"segment kind must be one of {SEGMENT_KINDS}, got {self.kind!r}")
        if self.length <= 0:
            raise ParameterError(f"segment length must be positive, got {self.length}")
        if self.views < 1 or self.length % self.views:
            raise ParameterError(f"{self.length} tokens do not split into {self.views} views")


@dataclass(frozen=True)
class SegmentLayout:
    segments: tuple[Segment, ...]

    def __post_init__(self):
        object.__setattr__(self, "segments", tuple(self.segments))
        if not self.segments:
            raise ParameterError("layout has no segments")

    @property
    def n_tokens(self) -> int:
        return sum(s.length for s in self.segments)

    def spans(self) -> list[tuple[int, int]]:
        out = []
        start = 0
        for s in self.segments:
            out.append((start, start + s.length))
            start += s.length
        return out

    def output_span(self) -> tuple[int, int]:
        found = [span for s, span in zip(self.segments, self.spans()) if s.kind == "output"]
        if len(found) != 1:
            raise ParameterError(f"layout needs exactly one output segment, has {len(found)}")
        return found[0]

    def token_blocks(self, per_viewport_blocks: bool = False) -> np.ndarray:
        """Block label per token; -1 marks causal-only tokens."""
        labels = np.full(self.n_tokens, -1, dtype=np.int64)
        next_label = 0
        by_id: dict[int, int] = {}
        for seg, (a, b) in zip(self.segments, self.spans()):
            if seg.block_id is None:
                continue
            if seg.kind == "output" and per_viewport_blocks:
                per = seg.length // seg.views
                for v in range(seg.views):
                    labels[a + v * per : a + (v + 1) * per] = next_label
                    next_label += 1
                continue
            if seg.block_id not in by_id:
                by_id[seg.block_id] = next_label
                next_label += 1
            labels[a:b] = by_id[seg.block_id]
        return labels


def make_layout(
    items: Sequence[tuple[str, int]],
    n_views: int,
    tokens_per_view: int,
    *,
    cond_bidirectional: bool = True,
    bidirectional: bool = True,
) -> SegmentLayout:
    """Layout for an interleaved condition sequence followed by the timestep
    token and the output viewport block.

    ``items`` is a list of ``("text", n)`` / ``("image", n)`` pairs in sequence order.
    Each condition image gets its own bidirectional block; the output block spans
    all viewports. ``bidirectional=False`` gives the fully causal ablation.
    """
    segs = []
    next_block = 0
    for kind, n in items:
        if kind == "text":
            segs.append(Segment("text", n))
        elif kind == "image":
            bid = next_block if (bidirectional and cond_bidirectional) else None
            next_block += 1
            segs.append(Segment("cond_image", n, bid))
        else:
            raise ParameterError(f"condition items must be 'text' or 'image', got {kind!r}")
    segs.append(Segment("timestep", 1))
    segs.append(Segment("output", n_views * tokens_per_view, next_block if bidirectional else None, views=n_views))
    return SegmentLayout(tuple(segs))


def build_attention_mask(layout: SegmentLayout, per_viewport_blocks: bool = False) -> np.ndarray:
    """Boolean (n, n) mask; entry (i, j) says whether token i may attend to token j.

    attend(i, j) = j <= i, or i and j lie in the same bidirectional block.
    """
    n = layout.n_tokens
    causal = np.tril(np.ones((n, n), dtype=bool))
    labels = layout.token_blocks(per_viewport_blocks)
    same_block = (labels[:, None] == labels[None, :]) & (labels[:, None] >= 0)
    return causal | same_block


def hash_token_ids(text: str, vocab: int) -> list[int]:
    """Stable word-level token ids from sha1, independent of PYTHONHASHSEED."""
    words = text.lower().split()
    return [int.from_bytes(hashlib.sha1(w.encode("utf-8")).digest()[:8], "little") % vocab for w in words]
