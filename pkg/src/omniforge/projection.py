"""
Resampling between ERP rasters and perspective viewports, and seam-blended stitching.

Rasters are float64 arrays shaped (H, W, C) with values in [0, 1]; 2-D inputs are
promoted to a single channel.
"""

from __future__ import annotations

import math
from typing import Sequence

import numpy as np

from .errors import CoverageError, DimensionError
from .geometry import (
    ViewportLayout,
    ViewportSpec,
    check_erp_dims,
    dir_to_erp,
    erp_pixel_dirs,
    project_to_viewport,
    viewport_pixel_dirs,
)


def as_raster(img) -> np.ndarray:
    a = np.asarray(img, dtype=np.float64)
    if a.ndim == 2:
        a = a[..., None]
    if a.ndim != 3 or not 1 <= a.shape[2] <= 4:
        raise DimensionError(f"raster must be (H, W, C) with 1-4 channels, got {a.shape}")
    if a.shape[0] <= 0 or a.shape[1] <= 0:
        raise DimensionError(f"raster has empty extent {a.shape}")
    if not np.all(np.isfinite(a)):
        raise DimensionError("raster contains non-finite values")
    return a


def as_erp(img) -> np.ndarray:
    a = as_raster(img)
    check_erp_dims(a.shape[1], a.shape[0])
    return a


def _bilinear(img: np.ndarray, x: np.ndarray, y: np.ndarray, wrap_x: bool) -> np.ndarray:
    """Sample at continuous pixel coords (centers at integer + 0.5)."""
    h, w = img.shape[:2]
    x = x - 0.5
    y = y - 0.5
    x0 = np.floor(x)
    y0 = np.floor(y)
    fx = (x - x0)[..., None]
    fy = (y - y0)[..., None]
    x0 = x0.astype(np.int64)
    y0 = y0.astype(np.int64)
    x1 = x0 + 1
    y1 = y0 + 1
    if wrap_x:
        x0 %= w
        x1 %= w
    else:
        x0 = np.clip(x0, 0, w - 1)
        x1 = np.clip(x1, 0, w - 1)
    y0 = np.clip(y0, 0, h - 1)
    y1 = np.clip(y1, 0, h - 1)
    top = img[y0, x0] * (1 - fx) + img[y0, x1] * fx
    bot = img[y1, x0] * (1 - fx) + img[y1, x1] * fx
    return top * (1 - fy) + bot * fy


def sample_erp(erp, u, v) -> np.ndarray:
    """Bilinear ERP lookup with horizontal wraparound and clamped rows at the poles."""
    erp = as_erp(erp)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    return _bilinear(erp, u, v, wrap_x=True)


def sample_viewport(vp, px, py) -> np.ndarray:
    vp = as_raster(vp)
    return _bilinear(vp, np.asarray(px, dtype=np.float64), np.asarray(py, dtype=np.float64), wrap_x=False)


def extract_viewport(erp, spec: ViewportSpec) -> np.ndarray:
    """Render one perspective viewport from an ERP image."""
    erp = as_erp(erp)
    h, w = erp.shape[:2]
    u, v = dir_to_erp(viewport_pixel_dirs(spec), w, h)
    return _bilinear(erp, u, v, wrap_x=True)


def blend_weight(px, py, spec: ViewportSpec) -> np.ndarray:
    """cos^2 falloff of the angle from the optical axis.

    The angle is normalized by the angle to the frustum edge along the same
    image-plane direction, so the weight is 1 on the axis and 0 on the border.
    Points outside the frustum get 0.
    """
    f = spec.focal
    a = (np.asarray(px, dtype=np.float64) - spec.width / 2) / f
    b = (np.asarray(py, dtype=np.float64) - spec.height / 2) / f
    half_x = (spec.width / 2) / f
    half_y = (spec.height / 2) / f
    k = np.maximum(np.abs(a) / half_x, np.abs(b) / half_y)
    r = np.hypot(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        s = np.where(r > 0, np.arctan(r) / np.arctan(r / np.where(k > 0, k, 1.0)), 0.0)
    wgt = np.cos(0.5 * np.pi * np.clip(s, 0.0, 1.0)) ** 2
    wgt = np.where(k <= 1.0, wgt, 0.0)
    # cos(pi/2) leaves ~1e-33 on the border
    return np.where(s >= 1.0, 0.0, wgt)


def viewport_footprint(spec: ViewportSpec, erp_w: int, erp_h: int):
    """Per-ERP-pixel viewport coords and blend weight, each shaped (erp_h, erp_w)."""
    dirs = erp_pixel_dirs(erp_w, erp_h)
    px, py, inside = project_to_viewport(dirs, spec)
    wgt = np.zeros(inside.shape)
    wgt[inside] = blend_weight(px[inside], py[inside], spec)
    return px, py, wgt


def viewport_weight_map(spec: ViewportSpec, erp_w: int, erp_h: int) -> np.ndarray:
    return viewport_footprint(spec, erp_w, erp_h)[2]


def project_viewport(vp, spec: ViewportSpec, erp_w: int, erp_h: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse-warp a viewport onto an ERP canvas.

    Returns:
        (image, weight): image is (erp_h, erp_w, C), zero where weight is 0.
    """
    vp = as_raster(vp)
    if vp.shape[:2] != (spec.height, spec.width):
        raise DimensionError(
            f"viewport raster is {vp.shape[1]}x{vp.shape[0]}, spec expects {spec.width}x{spec.height}"
        )
    check_erp_dims(erp_w, erp_h)
    px, py, wgt = viewport_footprint(spec, erp_w, erp_h)
    out = np.zeros((erp_h, erp_w, vp.shape[2]))
    hit = wgt > 0
    out[hit] = _bilinear(vp, px[hit], py[hit], wrap_x=False)
    return out, wgt


def stitch(
    viewports: Sequence,
    layout: ViewportLayout,
    erp_w: int,
    erp_h: int,
    extra_weights: Sequence[np.ndarray | None] | None = None,
) -> np.ndarray:
    """Weighted average of inverse-warped viewports.

    ``extra_weights`` optionally multiplies each viewport's ERP-space blend weight;
    used by edit compositing to restrict a stitch to a footprint.
    """
    if len(viewports) != len(layout):
        raise DimensionError(f"got {len(viewports)} viewports for a layout of {len(layout)}")
    check_erp_dims(erp_w, erp_h)
    acc = None
    total = np.zeros((erp_h, erp_w))
    # accumulate in list order so results are reproducible bit for bit
    for i, (vp, spec) in enumerate(zip(viewports, layout.specs)):
        img, wgt = project_viewport(vp, spec, erp_w, erp_h)
        if extra_weights is not None and extra_weights[i] is not None:
            wgt = wgt * extra_weights[i]
        if acc is None:
            acc = np.zeros((erp_h, erp_w, img.shape[2]))
        acc += img * wgt[..., None]
        total += wgt
    holes = np.argwhere(total <= 0)
    if len(holes):
        r, c = holes[0]
        raise CoverageError(int(r), int(c))
    return acc / total[..., None]


def seam_components(erp) -> tuple[float, float]:
    """(wrap difference, wrap second difference) across the u = 0 / u = w seam."""
    erp = as_raster(erp)
    first, second, last, before_last = erp[:, 0], erp[:, 1], erp[:, -1], erp[:, -2]
    wrap_diff = float(np.mean(np.abs(first - last)))
    d2_last = before_last - 2 * last + first
    d2_first = last - 2 * first + second
    wrap_d2 = float(np.mean(np.abs(np.concatenate([d2_last, d2_first]))))
    return wrap_diff, wrap_d2


def seam_metric(erp) -> float:
    """Left/right wraparound discontinuity score; 0 for perfectly wrapping images."""
    a, b = seam_components(erp)
    return a + b


def psnr(a, b, mask=None, peak: float = 1.0) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    diff = (a - b) ** 2
    if mask is not None:
        diff = diff[np.asarray(mask, dtype=bool)]
    mse = float(np.mean(diff))
    if mse == 0:
        return math.inf
    return 10 * math.log10(peak**2 / mse)


def split(erp, layout: ViewportLayout) -> list[np.ndarray]:
    return [extract_viewport(erp, spec) for spec in layout.specs]


def smooth_test_erp(w: int = 1024, h: int = 512, channels: int = 3) -> np.ndarray:
    """Low-frequency synthetic ERP defined as a smooth function on the sphere."""
    d = erp_pixel_dirs(w, h)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    lon = np.arctan2(x, z)
    # cos^4(lat) keeps the sin(4 lon) term smooth through the poles
    ripple = 0.08 * np.sin(4 * lon) * (1 - y * y) ** 2
    chans = [
        0.5 + 0.2 * x + 0.15 * y + 0.1 * z * x + ripple,
        0.5 + 0.5 * x * z + 0.1 * y,
        0.45 + 0.2 * z - 0.15 * x * y + 0.1 * y * y,
        0.5 + 0.3 * y,
    ]
    return np.stack(chans[:channels], axis=-1)
