"""Binary morphology and connected-component labelling."""

from __future__ import annotations

import enum
from dataclasses import dataclass

import numpy as np
from scipy import ndimage

from .grid import PixelMask, Region
from .polar import PolarImage, PolarKind

__all__ = [
    "SEShape",
    "StructuringElement",
    "MorphOp",
    "morph",
    "binary_morph",
    "label_components",
    "connected_components",
]


class SEShape(str, enum.Enum):
    RECT = "rect"
    DISK = "disk"
    VERTICAL_LINE = "vertical-line"


@dataclass(frozen=True)
class StructuringElement:
    """Odd-sized footprint. ``vertical-line`` runs along rows (axis 0)."""

    shape: SEShape = SEShape.RECT
    width: int = 3
    height: int = 3

    def __post_init__(self):
        object.__setattr__(self, "shape", SEShape(self.shape))
        for name in ("width", "height"):
            v = getattr(self, name)
            if v < 1 or v % 2 == 0:
                raise ValueError(f"structuring element {name} must be odd and >= 1, got {v}")
        if self.shape == SEShape.VERTICAL_LINE and self.width != 1:
            raise ValueError("a vertical-line element has width 1")

    def footprint(self) -> np.ndarray:
        if self.shape == SEShape.DISK:
            ry, rx = self.height // 2, self.width // 2
            yy, xx = np.mgrid[-ry : ry + 1, -rx : rx + 1]
            # half-pixel margin so that radius 1 gives the full 3x3 neighbourhood
            return (yy / (ry + 0.5)) ** 2 + (xx / (rx + 0.5)) ** 2 <= 1.0
        return np.ones((self.height, self.width), dtype=bool)

    @classmethod
    def rect(cls, width: int = 3, height: int | None = None):
        return cls(SEShape.RECT, width, width if height is None else height)

    @classmethod
    def disk(cls, radius: int):
        return cls(SEShape.DISK, 2 * radius + 1, 2 * radius + 1)

    @classmethod
    def vertical_line(cls, length: int):
        return cls(SEShape.VERTICAL_LINE, 1, length)


class MorphOp(str, enum.Enum):
    ERODE = "erode"
    DILATE = "dilate"
    OPEN = "open"
    CLOSE = "close"


def binary_morph(bits: np.ndarray, op, footprint: np.ndarray, iterations: int = 1,
                 wrap_axis: int | None = None) -> np.ndarray:
    """Morphology on a 2-D boolean array with false outside the array.

    ``wrap_axis`` makes that axis periodic instead (azimuth in polar rasters).
    """
    op = MorphOp(op)
    if iterations < 1:
        raise ValueError(f"iterations must be >= 1, got {iterations}")
    bits = np.asarray(bits, dtype=bool)
    fh, fw = footprint.shape
    pads = [2 * (fh // 2) * iterations + 1, 2 * (fw // 2) * iterations + 1]
    work = bits
    for axis in (0, 1):
        width = [(0, 0), (0, 0)]
        width[axis] = (pads[axis], pads[axis])
        mode = "wrap" if axis == wrap_axis else "constant"
        work = np.pad(work, width, mode=mode)

    def erode(a):
        return ndimage.binary_erosion(a, footprint, iterations=iterations, border_value=0)

    def dilate(a):
        return ndimage.binary_dilation(a, footprint, iterations=iterations, border_value=0)

    if op == MorphOp.ERODE:
        work = erode(work)
    elif op == MorphOp.DILATE:
        work = dilate(work)
    elif op == MorphOp.OPEN:
        work = dilate(erode(work))
    else:
        work = erode(dilate(work))
    return work[pads[0] : pads[0] + bits.shape[0], pads[1] : pads[1] + bits.shape[1]]


def morph(target: PixelMask | PolarImage, op, se: StructuringElement, iterations: int = 1):
    """Erode, dilate, open or close a mask or a binary polar raster.

    Cartesian masks treat everything outside the grid as false. Polar rasters
    wrap around in azimuth and are false beyond the first/last range bin.
    """
    if isinstance(target, PixelMask):
        bits = binary_morph(target.bits, op, se.footprint(), iterations)
        return PixelMask(target.spec, bits, target.role)
    if isinstance(target, PolarImage):
        if target.kind != PolarKind.BINARY:
            raise ValueError("morphology needs a binary polar image")
        bits = binary_morph(target.values, op, se.footprint(), iterations, wrap_axis=1)
        return target.with_values(bits)
    raise TypeError(f"cannot apply morphology to {type(target).__name__}")


def _structure(connectivity: int) -> np.ndarray:
    if connectivity == 4:
        return ndimage.generate_binary_structure(2, 1)
    if connectivity == 8:
        return ndimage.generate_binary_structure(2, 2)
    raise ValueError(f"connectivity must be 4 or 8, got {connectivity}")


def label_components(bits: np.ndarray, connectivity: int = 8,
                     wrap_axis: int | None = None) -> tuple[np.ndarray, int]:
    """Label connected components, ids 1..n in row-major order of first pixel.

    With ``wrap_axis`` the first and last slices along that axis are
    adjacent (polar azimuth seam).
    """
    bits = np.asarray(bits, dtype=bool)
    labels, n = ndimage.label(bits, structure=_structure(connectivity))
    if n == 0:
        return labels, 0
    if wrap_axis is not None and bits.shape[wrap_axis] > 1:
        labels, n = _merge_seam(labels, n, connectivity, wrap_axis)
    # renumber by first pixel in raster order
    flat = labels.ravel()
    idx = np.flatnonzero(flat)
    first = np.full(n + 1, flat.size, dtype=np.intp)
    np.minimum.at(first, flat[idx], idx)
    order = np.argsort(first[1:], kind="stable")
    remap = np.zeros(n + 1, dtype=labels.dtype)
    remap[order + 1] = np.arange(1, n + 1, dtype=labels.dtype)
    return remap[labels], n


def _merge_seam(labels, n, connectivity, axis):
    a = np.moveaxis(labels, axis, 1)
    first, last = a[:, 0], a[:, -1]
    parent = np.arange(n + 1)

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    offsets = (0,) if connectivity == 4 else (-1, 0, 1)
    rows = a.shape[0]
    for off in offsets:
        lo, hi = max(0, -off), min(rows, rows - off)
        u = last[lo:hi]
        v = first[lo + off : hi + off]
        for p, q in zip(u[(u > 0) & (v > 0)], v[(u > 0) & (v > 0)]):
            rp, rq = find(p), find(q)
            if rp != rq:
                parent[max(rp, rq)] = min(rp, rq)
    roots = np.array([find(i) for i in range(n + 1)])
    uniq, compact = np.unique(roots, return_inverse=True)
    return compact.reshape(-1)[labels].astype(labels.dtype), len(uniq) - 1


def connected_components(mask: PixelMask, connectivity: int = 8) -> list[Region]:
    """Maximal connected sets of true pixels, ordered by first pixel (row-major)."""
    labels, n = label_components(mask.bits, connectivity)
    regions = []
    for i, sl in enumerate(ndimage.find_objects(labels), start=1):
        ys, xs = np.nonzero(labels[sl] == i)
        regions.append(Region(i, ys + sl[0].start, xs + sl[1].start))
    return regions


def regions_from_labels(labels: np.ndarray, n: int) -> list[Region]:
    regions = []
    for i, sl in enumerate(ndimage.find_objects(labels, max_label=n), start=1):
        if sl is None:
            continue
        ys, xs = np.nonzero(labels[sl] == i)
        regions.append(Region(i, ys + sl[0].start, xs + sl[1].start))
    return regions

