"""
Seeded condition-mask generators and the edge-touch instance filter.

Randomness comes from numpy's Philox4x32-10 counter-based bit generator keyed
by ``MaskParams.seed``; Philox streams are specified bit-exactly, so a seed
yields the same mask on every platform and numpy release that keeps Philox.
Masks are boolean arrays shaped (H, W); True means hidden.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, fields

import numpy as np

from .errors import DegenerateInputError, DimensionError, ParameterError
from .geometry import ViewportLayout
from .projection import viewport_weight_map

MASK_KINDS = ("rect", "irregular", "view")


@dataclass(frozen=True)
class MaskParams:
    kind: str = "rect"
    # accepted area fraction is lo <= frac < hi
    area_frac_range: tuple[float, float] = (0.1, 0.3)
    stroke_count: int = 4
    brush_radius_range: tuple[float, float] = (6.0, 16.0)
    walk_length: int = 6
    step_length_range: tuple[float, float] = (10.0, 60.0)
    view_index: int = 0
    invert: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MASK_KINDS:
            raise ParameterError(f"mask kind must be one of {MASK_KINDS}, got {self.kind!r}")
        lo, hi = self.area_frac_range
        if not (0.0 < lo < hi <= 1.0):
            raise ParameterError(f"area_frac_range needs 0 < lo < hi <= 1, got {self.area_frac_range}")
        if self.stroke_count < 1:
            raise ParameterError("stroke_count must be positive")
        if self.walk_length < 0:
            raise ParameterError("walk_length must be non-negative")
        rlo, rhi = self.brush_radius_range
        if not (0.0 < rlo <= rhi):
            raise ParameterError(f"brush_radius_range needs 0 < lo <= hi, got {self.brush_radius_range}")
        slo, shi = self.step_length_range
        if not (0.0 <= slo <= shi):
            raise ParameterError(f"step_length_range needs 0 <= lo <= hi, got {self.step_length_range}")
        if not 0 <= self.seed < 2**64:
            raise ParameterError("seed must be an unsigned 64-bit integer")

    @classmethod
    def from_dict(cls, d: dict) -> "MaskParams":
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ParameterError(f"unknown mask parameters {sorted(unknown)}")
        kw = dict(d)
        for key in ("area_frac_range", "brush_radius_range", "step_length_range"):
            if key in kw:
                kw[key] = tuple(kw[key])
        return cls(**kw)


def mask_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(seed))


def _check_dims(w: int, h: int) -> None:
    if w <= 0 or h <= 0:
        raise DimensionError(f"mask dimensions must be positive, got {w}x{h}")


def gen_rect_mask(w: int, h: int, params: MaskParams) -> np.ndarray:
    """One axis-aligned rectangle whose area fraction lies in ``params.area_frac_range``."""
    if params.kind != "rect":
        raise ParameterError(f"gen_rect_mask needs kind 'rect', got {params.kind!r}")
    _check_dims(w, h)
    lo, hi = params.area_frac_range
    total = w * h
    heights = np.arange(1, h + 1)
    # integer widths with lo <= rh*rw/total < hi
    min_w = np.maximum(np.ceil(lo * total / heights - 1e-9).astype(np.int64), 1)
    max_w = np.minimum(np.ceil(hi * total / heights - 1e-9).astype(np.int64) - 1, w)
    feasible = min_w <= max_w
    if not feasible.any():
        raise ParameterError(f"no integral rectangle in {w}x{h} has area fraction in [{lo}, {hi})")
    rng = mask_rng(params.seed)
    idx = np.flatnonzero(feasible)
    k = idx[rng.integers(len(idx))]
    rh = int(heights[k])
    rw = int(rng.integers(min_w[k], max_w[k] + 1))
    top = int(rng.integers(0, h - rh + 1))
    left = int(rng.integers(0, w - rw + 1))
    mask = np.zeros((h, w), dtype=bool)
    mask[top : top + rh, left : left + rw] = True
    return mask


def _disc_offsets(radius: float) -> tuple[np.ndarray, np.ndarray]:
    r = int(math.floor(radius))
    dy, dx = np.mgrid[-r : r + 1, -r : r + 1]
    keep = dx * dx + dy * dy <= radius * radius
    return dy[keep], dx[keep]


def _four_connected_line(y0: int, x0: int, y1: int, x1: int) -> list[tuple[int, int]]:
    """Pixel path between two points where consecutive pixels share an edge."""
    pts = [(y0, x0)]
    y, x = y0, x0
    n = max(abs(y1 - y0), abs(x1 - x0))
    for i in range(1, n + 1):
        ty = round(y0 + (y1 - y0) * i / n)
        tx = round(x0 + (x1 - x0) * i / n)
        if ty != y and tx != x:
            pts.append((y, tx))  # step horizontally first to avoid a diagonal move
        y, x = ty, tx
        pts.append((y, x))
    return pts


def gen_irregular_mask(w: int, h: int, params: MaskParams) -> np.ndarray:
    """Union of random-walk brush strokes, each a 4-connected set of disc stamps."""
    if params.kind != "irregular":
        raise ParameterError(f"gen_irregular_mask needs kind 'irregular', got {params.kind!r}")
    _check_dims(w, h)
    rng = mask_rng(params.seed)
    mask = np.zeros((h, w), dtype=bool)
    for _ in range(params.stroke_count):
        radius = float(rng.uniform(*params.brush_radius_range))
        margin = int(math.ceil(radius))
        # keep stamps away from the border when the image allows, so discs are not clipped
        ylo, yhi = (margin, h - 1 - margin) if h - 1 - 2 * margin >= 0 else (0, h - 1)
        xlo, xhi = (margin, w - 1 - margin) if w - 1 - 2 * margin >= 0 else (0, w - 1)
        y = int(rng.integers(ylo, yhi + 1))
        x = int(rng.integers(xlo, xhi + 1))
        path = [(y, x)]
        for _ in range(params.walk_length):
            angle = rng.uniform(0.0, 2 * math.pi)
            length = rng.uniform(*params.step_length_range)
            ny = int(np.clip(round(y + length * math.sin(angle)), ylo, yhi))
            nx = int(np.clip(round(x + length * math.cos(angle)), xlo, xhi))
            path.extend(_four_connected_line(y, x, ny, nx)[1:])
            y, x = ny, nx
        dy, dx = _disc_offsets(radius)
        for py, px in path:
            yy = py + dy
            xx = px + dx
            ok = (yy >= 0) & (yy < h) & (xx >= 0) & (xx < w)
            mask[yy[ok], xx[ok]] = True
    return mask


def gen_view_mask(erp_w: int, erp_h: int, layout: ViewportLayout, view_index: int, invert: bool = False) -> np.ndarray:
    """Bits set where the indexed viewport has positive stitching weight."""
    if not 0 <= view_index < len(layout):
        raise ParameterError(f"view_index {view_index} out of range for {len(layout)} viewports")
    mask = viewport_weight_map(layout.specs[view_index], erp_w, erp_h) > 0
    return ~mask if invert else mask


def generate_mask(w: int, h: int, params: MaskParams, layout: ViewportLayout | None = None) -> np.ndarray:
    if params.kind == "rect":
        return gen_rect_mask(w, h, params)
    if params.kind == "irregular":
        return gen_irregular_mask(w, h, params)
    if layout is None:
        raise ParameterError("view masks need a viewport layout")
    return gen_view_mask(w, h, layout, params.view_index, params.invert)


def edge_touch_filter(instance_mask) -> bool:
    """True (discard) when any set bit lies on the outermost rows or columns."""
    m = np.asarray(instance_mask, dtype=bool)
    if m.ndim != 2:
        raise DimensionError(f"instance mask must be 2-D, got shape {m.shape}")
    if not m.any():
        raise DegenerateInputError("instance mask is empty")
    return bool(m[0].any() or m[-1].any() or m[:, 0].any() or m[:, -1].any())
