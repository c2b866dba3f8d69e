"""
Nearest-neighbour resampling between the cartesian composite grid and
station-centred polar rasters.

A polar raster has shape ``(r_bins, theta_bins)``: rows are range bins of
width ``dr = r_max / r_bins`` km and columns are azimuth bins of width
``2 pi / theta_bins``. Azimuth is measured from +x towards +y (image rows).
Bin ``(i, j)`` is represented by its centre ``((i + 0.5) dr, (j + 0.5) dtheta)``.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .grid import GridSpec, MaskRole, PixelMask, RadarFrame

__all__ = ["PolarKind", "PolarImage", "to_polar", "from_polar", "sample_polar", "polar_bin_index"]

DEFAULT_R_BINS = 450
DEFAULT_THETA_BINS = 720


class PolarKind(str, enum.Enum):
    LABELS = "labels"
    BINARY = "binary"
    REAL = "real"


@dataclass(frozen=True, eq=False)
class PolarImage:
    origin: tuple[float, float]
    r_max: float
    r_bins: int
    theta_bins: int
    values: np.ndarray
    kind: PolarKind = PolarKind.BINARY
    inside: np.ndarray | None = None

    def __post_init__(self):
        if self.r_bins < 1 or self.theta_bins < 1:
            raise ValueError("r_bins and theta_bins must be >= 1")
        if self.values.shape != (self.r_bins, self.theta_bins):
            raise ValueError(
                f"values must have shape {(self.r_bins, self.theta_bins)}, got {self.values.shape}"
            )
        object.__setattr__(self, "kind", PolarKind(self.kind))

    @property
    def dr(self) -> float:
        return self.r_max / self.r_bins

    @property
    def dtheta(self) -> float:
        return 2 * np.pi / self.theta_bins

    @property
    def radii(self) -> np.ndarray:
        return (np.arange(self.r_bins) + 0.5) * self.dr

    @property
    def angles(self) -> np.ndarray:
        return (np.arange(self.theta_bins) + 0.5) * self.dtheta

    def with_values(self, values: np.ndarray, kind: PolarKind | None = None) -> "PolarImage":
        return PolarImage(
            self.origin, self.r_max, self.r_bins, self.theta_bins, values,
            kind or self.kind, self.inside,
        )


@lru_cache(maxsize=64)
def _backprojection(spec: GridSpec, origin, r_max, r_bins, theta_bins):
    dr = r_max / r_bins
    r = (np.arange(r_bins) + 0.5) * dr / spec.cell_size
    th = (np.arange(theta_bins) + 0.5) * (2 * np.pi / theta_bins)
    x = origin[0] + r[:, None] * np.cos(th)[None, :]
    y = origin[1] + r[:, None] * np.sin(th)[None, :]
    px = np.floor(x + 0.5).astype(np.intp)
    py = np.floor(y + 0.5).astype(np.intp)
    inside = (px >= 0) & (px < spec.width) & (py >= 0) & (py < spec.height)
    px[~inside] = 0
    py[~inside] = 0
    for a in (px, py, inside):
        a.setflags(write=False)
    return py, px, inside


def sample_polar(values: np.ndarray, spec: GridSpec, origin, r_max: float = 225.0,
                 r_bins: int = DEFAULT_R_BINS, theta_bins: int = DEFAULT_THETA_BINS):
    """Sample an arbitrary cartesian array onto a polar raster.

    Returns ``(polar_values, inside)``; bins whose back-projection falls
    outside the grid hold 0 and are False in ``inside``.
    """
    if r_bins < 1 or theta_bins < 1:
        raise ValueError("r_bins and theta_bins must be >= 1")
    origin = (float(origin[0]), float(origin[1]))
    if not np.all(np.isfinite(origin)):
        raise ValueError("origin must be finite")
    py, px, inside = _backprojection(spec, origin, float(r_max), int(r_bins), int(theta_bins))
    out = np.asarray(values)[py, px]
    out = np.where(inside, out, np.zeros((), dtype=out.dtype))
    return out, inside


def to_polar(source: RadarFrame | PixelMask, origin, r_max: float = 225.0,
             r_bins: int = DEFAULT_R_BINS, theta_bins: int = DEFAULT_THETA_BINS) -> PolarImage:
    """Resample a frame (labels) or mask (binary) around ``origin``."""
    if isinstance(source, RadarFrame):
        values, kind = source.labels, PolarKind.LABELS
    elif isinstance(source, PixelMask):
        values, kind = source.bits, PolarKind.BINARY
    else:
        raise TypeError(f"expected RadarFrame or PixelMask, got {type(source).__name__}")
    polar, inside = sample_polar(values, source.spec, origin, r_max, r_bins, theta_bins)
    return PolarImage(
        (float(origin[0]), float(origin[1])), float(r_max), int(r_bins), int(theta_bins),
        polar, kind, inside,
    )


@lru_cache(maxsize=64)
def _bin_index(spec: GridSpec, origin, r_max, r_bins, theta_bins):
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    dx = xx - origin[0]
    dy = yy - origin[1]
    r = np.hypot(dx, dy) * spec.cell_size
    th = np.mod(np.arctan2(dy, dx), 2 * np.pi)
    ri = np.floor(r / (r_max / r_bins)).astype(np.intp)
    ti = np.floor(th / (2 * np.pi / theta_bins)).astype(np.intp) % theta_bins
    within = (r <= r_max) & (ri < r_bins)
    ri[~within] = 0
    for a in (ri, ti, within):
        a.setflags(write=False)
    return ri, ti, within


def polar_bin_index(spec: GridSpec, origin, r_max: float, r_bins: int, theta_bins: int):
    """Per-pixel ``(r_index, theta_index, within_range)`` arrays."""
    origin = (float(origin[0]), float(origin[1]))
    return _bin_index(spec, origin, float(r_max), int(r_bins), int(theta_bins))


def from_polar(polar: PolarImage, spec: GridSpec,
               role: MaskRole = MaskRole.ARTIFACT) -> PixelMask:
    """Reproject a binary polar raster: a pixel is set iff its bin is set."""
    if polar.kind != PolarKind.BINARY:
        raise ValueError(f"from_polar needs a binary polar image, got {polar.kind.value}")
    ri, ti, within = polar_bin_index(spec, polar.origin, polar.r_max, polar.r_bins,
                                     polar.theta_bins)
    bits = np.asarray(polar.values, dtype=bool)[ri, ti] & within
    return PixelMask(spec, bits, role)
