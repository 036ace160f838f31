"""
Spherical geometry for equirectangular (ERP) images and pinhole viewports.

Coordinate system (Y-up, right-handed):
- +Z is forward (ERP center), +X is right, +Y is up (north pole).
- lon in [-pi, pi) grows left to right, lon = -pi at u = 0.
- lat in [-pi/2, pi/2], +pi/2 at v = 0 (top row).

Pixel coordinates are continuous; pixel centers sit at integer + 0.5.
All functions broadcast over numpy arrays; directions carry a trailing axis of 3.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import NamedTuple

import numpy as np

from .errors import DegenerateInputError, DimensionError, ParameterError

_DEGENERATE_NORM = 1e-12
# x^2 + z^2 below this counts as a pole for the u tie-break
_POLE_EPS = 1e-24

VIEW_NAMES = ("front", "right", "back", "left", "top", "bottom")
DEFAULT_FOV_DEG = 110.0
DEFAULT_VIEW_RES = 256


class LonLat(NamedTuple):
    lon: float
    lat: float

    def normalized(self) -> "LonLat":
        """Wrap lon into [-pi, pi) and clamp lat to the poles."""
        lon = (self.lon + math.pi) % (2 * math.pi) - math.pi
        lat = min(max(self.lat, -math.pi / 2), math.pi / 2)
        return LonLat(lon, lat)


def check_erp_dims(w: int, h: int) -> None:
    if w <= 0 or h <= 0:
        raise DimensionError(f"ERP dimensions must be positive, got {w}x{h}")
    if w != 2 * h:
        raise DimensionError(f"ERP width must equal 2 x height, got {w}x{h}")


def lonlat_to_dir(lon, lat) -> np.ndarray:
    lon = np.asarray(lon, dtype=np.float64)
    lat = np.asarray(lat, dtype=np.float64)
    cl = np.cos(lat)
    return np.stack([cl * np.sin(lon), np.sin(lat), cl * np.cos(lon)], axis=-1)


def dir_to_lonlat(d) -> tuple[np.ndarray, np.ndarray]:
    d = _unit(d)
    x, y, z = d[..., 0], d[..., 1], d[..., 2]
    lon = np.arctan2(x, z)
    # arctan2 returns (-pi, pi]; fold +pi onto -pi
    lon = np.where(lon >= np.pi, lon - 2 * np.pi, lon)
    lat = np.arcsin(np.clip(y, -1.0, 1.0))
    return lon, lat


def erp_to_dir(u, v, w: int, h: int) -> np.ndarray:
    """Map continuous ERP pixel coordinates to unit directions.

    Args:
        u: horizontal pixel coordinate(s) in [0, w].
        v: vertical pixel coordinate(s) in [0, h].
        w, h: ERP size, w = 2h.

    Returns:
        Array of shape broadcast(u, v).shape + (3,).
    """
    check_erp_dims(w, h)
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    lon = (u / w) * 2 * np.pi - np.pi
    lat = np.pi / 2 - (v / h) * np.pi
    return lonlat_to_dir(lon, lat)


def dir_to_erp(d, w: int, h: int) -> tuple[np.ndarray, np.ndarray]:
    """Inverse of :func:`erp_to_dir`. At the poles u is pinned to w/2."""
    check_erp_dims(w, h)
    d = _unit(d)
    lon, lat = dir_to_lonlat(d)
    u = (lon + np.pi) / (2 * np.pi) * w
    v = (np.pi / 2 - lat) / np.pi * h
    at_pole = d[..., 0] ** 2 + d[..., 2] ** 2 < _POLE_EPS
    u = np.where(at_pole, w / 2, u)
    return u, v


def _unit(d) -> np.ndarray:
    d = np.asarray(d, dtype=np.float64)
    if d.shape[-1:] != (3,):
        raise DimensionError(f"direction arrays need a trailing axis of 3, got {d.shape}")
    n = np.linalg.norm(d, axis=-1, keepdims=True)
    if np.any(n < _DEGENERATE_NORM):
        raise DegenerateInputError("zero-length direction vector")
    return d / n


@dataclass(frozen=True)
class ViewportSpec:
    """Pinhole camera on the sphere: yaw about +Y, pitch about +X (positive looks up)."""

    yaw: float
    pitch: float
    fov: float
    width: int
    height: int

    def __post_init__(self):
        if not (0.0 < self.fov < math.pi):
            raise ParameterError(f"fov must lie in (0, pi), got {self.fov}")
        if self.width <= 0 or self.height <= 0:
            raise DimensionError(f"viewport size must be positive, got {self.width}x{self.height}")

    @property
    def focal(self) -> float:
        return (self.width / 2) / math.tan(self.fov / 2)

    @property
    def rotation(self) -> np.ndarray:
        """Camera-to-world rotation: pitch about X, then yaw about Y."""
        cp, sp = math.cos(self.pitch), math.sin(self.pitch)
        cy, sy = math.cos(self.yaw), math.sin(self.yaw)
        r_pitch = np.array([[1.0, 0.0, 0.0], [0.0, cp, sp], [0.0, -sp, cp]])
        r_yaw = np.array([[cy, 0.0, sy], [0.0, 1.0, 0.0], [-sy, 0.0, cy]])
        return r_yaw @ r_pitch

    @property
    def axis(self) -> np.ndarray:
        return self.rotation[:, 2].copy()


def viewport_to_dir(px, py, spec: ViewportSpec) -> np.ndarray:
    f = spec.focal
    px = np.asarray(px, dtype=np.float64)
    py = np.asarray(py, dtype=np.float64)
    x = (px - spec.width / 2) / f
    y = -(py - spec.height / 2) / f
    x, y = np.broadcast_arrays(x, y)
    ray = np.stack([x, y, np.ones_like(x)], axis=-1)
    ray /= np.linalg.norm(ray, axis=-1, keepdims=True)
    return ray @ spec.rotation.T


def project_to_viewport(d, spec: ViewportSpec) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Vectorized projection of directions onto a viewport image plane.

    Returns (px, py, inside); px/py are NaN where the direction is behind the camera.
    ``inside`` marks points in front of the camera landing in [0, w] x [0, h].
    """
    d = _unit(d)
    cam = d @ spec.rotation  # world-to-camera is R^T, applied on the right
    cz = cam[..., 2]
    front = cz > 0
    safe = np.where(front, cz, 1.0)
    f = spec.focal
    px = np.where(front, f * cam[..., 0] / safe + spec.width / 2, np.nan)
    py = np.where(front, -f * cam[..., 1] / safe + spec.height / 2, np.nan)
    with np.errstate(invalid="ignore"):
        inside = front & (px >= 0) & (px <= spec.width) & (py >= 0) & (py <= spec.height)
    return px, py, inside


def dir_to_viewport(d, spec: ViewportSpec) -> tuple[float, float] | None:
    """Single-direction inverse of :func:`viewport_to_dir`; None when not visible."""
    px, py, inside = project_to_viewport(np.asarray(d, dtype=np.float64).reshape(3), spec)
    if not bool(inside):
        return None
    return float(px), float(py)


@dataclass(frozen=True)
class ViewportLayout:
    specs: tuple[ViewportSpec, ...]
    names: tuple[str, ...]

    def __post_init__(self):
        if len(self.specs) != len(self.names):
            raise ParameterError("layout specs and names differ in length")
        if len(set(self.names)) != len(self.names):
            raise ParameterError(f"duplicate viewport names in {self.names}")

    def __len__(self) -> int:
        return len(self.specs)

    def index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise ParameterError(f"unknown viewport {name!r}; layout has {self.names}") from None

    def spec(self, name: str) -> ViewportSpec:
        return self.specs[self.index(name)]

    def permuted(self, order) -> "ViewportLayout":
        return ViewportLayout(tuple(self.specs[i] for i in order), tuple(self.names[i] for i in order))


def cube_layout(fov: float = math.radians(DEFAULT_FOV_DEG), res: int = DEFAULT_VIEW_RES) -> ViewportLayout:
    """Six viewports on the signed coordinate axes: front, right, back, left, top, bottom.

    fov >= pi raises; fov <= pi/2 only warns since full coverage is then not guaranteed.
    """
    if fov >= math.pi:
        raise ParameterError(f"fov must be below pi, got {fov}")
    if fov <= math.pi / 2:
        warnings.warn(
            f"fov {math.degrees(fov):.3f} deg <= 90 deg: sphere coverage is not guaranteed",
            stacklevel=2,
        )
    if res <= 0:
        raise DimensionError(f"viewport resolution must be positive, got {res}")
    poses = [
        (0.0, 0.0),
        (math.pi / 2, 0.0),
        (math.pi, 0.0),
        (3 * math.pi / 2, 0.0),
        (0.0, math.pi / 2),
        (0.0, -math.pi / 2),
    ]
    specs = tuple(ViewportSpec(yaw, pitch, fov, res, res) for yaw, pitch in poses)
    return ViewportLayout(specs, VIEW_NAMES)


def erp_pixel_dirs(w: int, h: int) -> np.ndarray:
    """Directions through every ERP pixel center, shape (h, w, 3)."""
    check_erp_dims(w, h)
    u = np.arange(w) + 0.5
    v = np.arange(h) + 0.5
    uu, vv = np.meshgrid(u, v)
    return erp_to_dir(uu, vv, w, h)


def viewport_pixel_dirs(spec: ViewportSpec) -> np.ndarray:
    """Directions through every viewport pixel center, shape (height, width, 3)."""
    px = np.arange(spec.width) + 0.5
    py = np.arange(spec.height) + 0.5
    xx, yy = np.meshgrid(px, py)
    return viewport_to_dir(xx, yy, spec)


def min_coverage_fov(fov: float, res: int) -> float:
    """Smallest fov that still guarantees sampled full-sphere coverage at this resolution."""
    return math.pi / 2 + 2 * math.atan(math.tan(fov / 2) / res)
