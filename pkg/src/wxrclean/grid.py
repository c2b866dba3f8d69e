"""
Core raster data model for quantized radar composites.

Arrays are stored row-major with shape ``(height, width)`` and indexed as
``[y, x]``. Pixel ``(x, y)`` has its centre at integer coordinates, so a
station at ``(cx, cy)`` is ``hypot(x - cx, y - cy) * cell_size`` km away
from it.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field, replace
from typing import Iterable

import numpy as np

__all__ = [
    "REFLECTIVITY_DBZ",
    "N_LABELS",
    "GridSpec",
    "ReflectivityScale",
    "DEFAULT_SCALE",
    "RadarFrame",
    "MaskRole",
    "PixelMask",
    "RadarStation",
    "RadarStationConfig",
    "DEFAULT_STATIONS",
    "Region",
    "label_to_dbz",
    "labels_to_dbz",
    "dbz_to_label",
    "dbz_to_labels",
]

#: Composite reflectivity class centres in dBZ, label 0 .. 13.
REFLECTIVITY_DBZ = (
    0.0, 11.82, 14.0, 19.46, 22.0, 26.69, 30.0,
    34.19, 38.0, 41.82, 46.0, 50.19, 54.27, 58.0,
)
N_LABELS = len(REFLECTIVITY_DBZ)
TIE_TOLERANCE = 1e-9  # dBZ


@dataclass(frozen=True)
class GridSpec:
    """Raster geometry: pixel counts and square cell size in km."""

    width: int = 824
    height: int = 648
    cell_size: float = 1.0

    def __post_init__(self):
        if int(self.width) < 1 or int(self.height) < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.width}x{self.height}")
        if not self.cell_size > 0:
            raise ValueError(f"cell_size must be positive, got {self.cell_size}")

    @property
    def shape(self) -> tuple[int, int]:
        return (self.height, self.width)

    @property
    def size(self) -> int:
        return self.width * self.height


@dataclass(frozen=True)
class ReflectivityScale:
    """Ordered label -> dBZ lookup (14 entries, first one 0 dBZ)."""

    dbz_values: tuple[float, ...] = REFLECTIVITY_DBZ

    def __post_init__(self):
        values = tuple(float(v) for v in self.dbz_values)
        if len(values) != N_LABELS:
            raise ValueError(f"scale needs exactly {N_LABELS} entries, got {len(values)}")
        if values[0] != 0.0:
            raise ValueError("first scale entry must be 0 dBZ")
        if any(b <= a for a, b in zip(values, values[1:])):
            raise ValueError("scale entries must be strictly increasing")
        object.__setattr__(self, "dbz_values", values)

    @property
    def table(self) -> np.ndarray:
        return np.asarray(self.dbz_values, dtype=np.float64)


DEFAULT_SCALE = ReflectivityScale()


def label_to_dbz(label: int, scale: ReflectivityScale = DEFAULT_SCALE) -> float:
    """Return the dBZ value of a quantized label."""
    if isinstance(label, (bool, np.bool_)) or int(label) != label:
        raise ValueError(f"label must be an integer, got {label!r}")
    label = int(label)
    if not 0 <= label < N_LABELS:
        raise ValueError(f"label {label} outside [0, {N_LABELS - 1}]")
    return scale.dbz_values[label]


def labels_to_dbz(labels: np.ndarray, scale: ReflectivityScale = DEFAULT_SCALE) -> np.ndarray:
    """Vectorized :func:`label_to_dbz`; output is float64."""
    labels = np.asarray(labels)
    if labels.size and (labels.min() < 0 or labels.max() >= N_LABELS):
        raise ValueError(f"labels outside [0, {N_LABELS - 1}]")
    return scale.table[labels.astype(np.intp)]


def dbz_to_labels(dbz, scale: ReflectivityScale = DEFAULT_SCALE) -> np.ndarray:
    """Nearest-entry quantization; exact ties go to the lower label."""
    dbz = np.asarray(dbz, dtype=np.float64)
    if not np.all(np.isfinite(dbz)):
        raise ValueError("dBZ values must be finite")
    dist = np.abs(dbz[..., None] - scale.table)
    # table entries are decimal, so a midpoint can miss an exact tie by an
    # ulp; anything within TIE_TOLERANCE of the best counts as tied, and
    # argmax picks the first, i.e. lowest, such label
    near = dist <= dist.min(axis=-1, keepdims=True) + TIE_TOLERANCE
    return np.argmax(near, axis=-1).astype(np.uint8)


def dbz_to_label(dbz: float, scale: ReflectivityScale = DEFAULT_SCALE) -> int:
    """Quantize one dBZ value to the nearest label (ties toward the lower one)."""
    if not math.isfinite(dbz):
        raise ValueError(f"dBZ must be finite, got {dbz!r}")
    return int(dbz_to_labels(dbz, scale))


def _frozen(a: np.ndarray) -> np.ndarray:
    a = np.array(a, copy=True)
    a.setflags(write=False)
    return a


@dataclass(frozen=True, eq=False)
class RadarFrame:
    """One quantized composite: labels 0-13, validity flags and a timestamp.

    Invalid pixels always carry label 0. Arrays are copied and made
    read-only on construction.
    """

    spec: GridSpec
    labels: np.ndarray
    valid: np.ndarray
    timestamp: int = 0

    def __post_init__(self):
        labels = np.asarray(self.labels)
        valid = np.asarray(self.valid, dtype=bool)
        if labels.shape != self.spec.shape or valid.shape != self.spec.shape:
            raise ValueError(
                f"arrays must have shape {self.spec.shape}, got {labels.shape} / {valid.shape}"
            )
        if labels.size and (labels.min() < 0 or labels.max() >= N_LABELS):
            raise ValueError(f"labels outside [0, {N_LABELS - 1}]")
        if np.any(labels[~valid] != 0):
            raise ValueError("invalid pixels must carry label 0")
        object.__setattr__(self, "labels", _frozen(labels.astype(np.uint8)))
        object.__setattr__(self, "valid", _frozen(valid))
        object.__setattr__(self, "timestamp", int(self.timestamp))

    @classmethod
    def from_labels(cls, labels, valid=None, timestamp: int = 0, cell_size: float = 1.0):
        labels = np.asarray(labels)
        spec = GridSpec(width=labels.shape[1], height=labels.shape[0], cell_size=cell_size)
        if valid is None:
            valid = np.ones(labels.shape, dtype=bool)
        return cls(spec, labels, valid, timestamp)

    @classmethod
    def empty(cls, spec: GridSpec, timestamp: int = 0):
        return cls(spec, np.zeros(spec.shape, np.uint8), np.ones(spec.shape, bool), timestamp)

    @property
    def precipitation(self) -> np.ndarray:
        """Boolean array of pixels with a nonzero label."""
        return self.labels > 0

    def dbz(self, scale: ReflectivityScale = DEFAULT_SCALE) -> np.ndarray:
        """Per-pixel dBZ; invalid pixels map to 0."""
        return labels_to_dbz(self.labels, scale)

    def replace(self, **changes) -> "RadarFrame":
        return replace(self, **changes)

    def equals(self, other: "RadarFrame") -> bool:
        return (
            self.spec == other.spec
            and self.timestamp == other.timestamp
            and np.array_equal(self.labels, other.labels)
            and np.array_equal(self.valid, other.valid)
        )


class MaskRole(str, enum.Enum):
    ARTIFACT_CANDIDATE = "artifact-candidate"
    ARTIFACT = "artifact"
    SHADOW = "shadow"
    CORRECTION = "correction"
    VALID = "valid"


@dataclass(frozen=True, eq=False)
class PixelMask:
    """Binary per-pixel mask tagged with the role it plays in the pipeline."""

    spec: GridSpec
    bits: np.ndarray
    role: MaskRole = MaskRole.ARTIFACT

    def __post_init__(self):
        bits = np.asarray(self.bits)
        if bits.shape != self.spec.shape:
            raise ValueError(f"mask must have shape {self.spec.shape}, got {bits.shape}")
        object.__setattr__(self, "bits", _frozen(bits.astype(bool)))
        object.__setattr__(self, "role", MaskRole(self.role))

    @classmethod
    def empty(cls, spec: GridSpec, role: MaskRole = MaskRole.ARTIFACT):
        return cls(spec, np.zeros(spec.shape, bool), role)

    @property
    def count(self) -> int:
        return int(np.count_nonzero(self.bits))

    def with_role(self, role: MaskRole) -> "PixelMask":
        return PixelMask(self.spec, self.bits, role)

    def _check(self, other: "PixelMask"):
        if self.spec != other.spec:
            raise ValueError(f"grid mismatch: {self.spec} vs {other.spec}")

    def union(self, other: "PixelMask", role: MaskRole | None = None) -> "PixelMask":
        self._check(other)
        return PixelMask(self.spec, self.bits | other.bits, role or self.role)

    def intersection(self, other: "PixelMask", role: MaskRole | None = None) -> "PixelMask":
        self._check(other)
        return PixelMask(self.spec, self.bits & other.bits, role or self.role)

    def equals(self, other: "PixelMask") -> bool:
        return self.spec == other.spec and np.array_equal(self.bits, other.bits)


@dataclass(frozen=True)
class RadarStation:
    x: float
    y: float
    range_km: float = 225.0

    def __post_init__(self):
        if not (math.isfinite(self.x) and math.isfinite(self.y)):
            raise ValueError("station centre must be finite")
        if not self.range_km > 0:
            raise ValueError(f"station range must be positive, got {self.range_km}")

    def distance_grid(self, spec: GridSpec) -> np.ndarray:
        """Distance in km from the station to every pixel centre."""
        yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
        return np.hypot(xx - self.x, yy - self.y) * spec.cell_size

    def azimuth_grid(self, spec: GridSpec) -> np.ndarray:
        """Angle in [0, 2pi) from +x towards +y (image rows) for every pixel."""
        yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
        return np.mod(np.arctan2(yy - self.y, xx - self.x), 2 * np.pi)


@dataclass(frozen=True)
class RadarStationConfig:
    stations: tuple[RadarStation, ...]

    def __post_init__(self):
        stations = tuple(self.stations)
        if not stations:
            raise ValueError("at least one station is required")
        object.__setattr__(self, "stations", stations)

    def __len__(self):
        return len(self.stations)

    def __iter__(self):
        return iter(self.stations)

    def __getitem__(self, i) -> RadarStation:
        return self.stations[i]

    @classmethod
    def from_dict(cls, data: dict) -> "RadarStationConfig":
        return cls(tuple(
            RadarStation(float(s["x"]), float(s["y"]), float(s.get("range", 225.0)))
            for s in data["stations"]
        ))

    def to_dict(self) -> dict:
        return {"stations": [{"x": s.x, "y": s.y, "range": s.range_km} for s in self.stations]}


# Four fixed sites on the default 824x648 composite; abstract positions.
DEFAULT_STATIONS = RadarStationConfig((
    RadarStation(640.0, 250.0),
    RadarStation(430.0, 220.0),
    RadarStation(210.0, 380.0),
    RadarStation(500.0, 430.0),
))


@dataclass(frozen=True, eq=False)
class Region:
    """A connected set of pixels, stored as coordinate arrays."""

    id: int
    ys: np.ndarray
    xs: np.ndarray
    bbox: tuple[int, int, int, int] = field(default=(0, 0, 0, 0))

    def __post_init__(self):
        ys = np.asarray(self.ys, dtype=np.intp)
        xs = np.asarray(self.xs, dtype=np.intp)
        if ys.size == 0 or ys.shape != xs.shape:
            raise ValueError("region needs a non-empty, matched set of coordinates")
        object.__setattr__(self, "ys", _frozen(ys))
        object.__setattr__(self, "xs", _frozen(xs))
        object.__setattr__(
            self, "bbox", (int(xs.min()), int(ys.min()), int(xs.max()), int(ys.max()))
        )

    @property
    def size(self) -> int:
        return int(self.ys.size)

    @property
    def pixels(self) -> set[tuple[int, int]]:
        return set(zip(self.xs.tolist(), self.ys.tolist()))

    def to_bits(self, spec: GridSpec) -> np.ndarray:
        bits = np.zeros(spec.shape, bool)
        bits[self.ys, self.xs] = True
        return bits

    def to_mask(self, spec: GridSpec, role: MaskRole = MaskRole.CORRECTION) -> PixelMask:
        return PixelMask(spec, self.to_bits(spec), role)


def union_masks(masks: Iterable[PixelMask], role: MaskRole) -> PixelMask:
    masks = list(masks)
    if not masks:
        raise ValueError("need at least one mask")
    out = masks[0].bits.copy()
    for m in masks[1:]:
        masks[0]._check(m)
        out |= m.bits
    return PixelMask(masks[0].spec, out, role)


def check_same_grid(*items) -> GridSpec:
    specs = {it.spec for it in items}
    if len(specs) != 1:
        raise ValueError(f"grid mismatch: {sorted(map(str, specs))}")
    return items[0].spec
