"""
Gap filling of non-valid radar pixels from co-registered satellite channels.

Each connected region of the correction mask is filled independently. Its
training data are the valid pixels in a band around it, obtained by
dilating the region and removing the region itself; every masked pixel then
gets the rounded mean label of its k nearest training pixels in 12-channel
satellite space.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field

import numpy as np
from scipy import ndimage

from .grid import N_LABELS, GridSpec, MaskRole, PixelMask, RadarFrame, Region, check_same_grid
from .morphology import StructuringElement, connected_components

__all__ = [
    "MSG_CHANNELS",
    "MsgFrame",
    "CorrectionConfig",
    "TrainingRing",
    "RegionStatus",
    "RegionReport",
    "CorrectionReport",
    "build_correction_mask",
    "extract_training_ring",
    "knn_predict",
    "knn_predict_many",
    "correct_frame",
]

MSG_CHANNELS = 12


@dataclass(frozen=True, eq=False)
class MsgFrame:
    """Twelve satellite channels resampled onto the radar grid."""

    spec: GridSpec
    channels: np.ndarray  # (12, height, width) float32
    timestamp: int = 0

    def __post_init__(self):
        ch = np.asarray(self.channels, dtype=np.float32)
        if ch.shape != (MSG_CHANNELS,) + self.spec.shape:
            raise ValueError(f"expected channels of shape {(MSG_CHANNELS,) + self.spec.shape}, got {ch.shape}")
        if not np.all(np.isfinite(ch)):
            raise ValueError("satellite channels must be finite")
        ch = ch.copy()
        ch.setflags(write=False)
        object.__setattr__(self, "channels", ch)
        object.__setattr__(self, "timestamp", int(self.timestamp))

    def vectors(self, ys, xs) -> np.ndarray:
        """``(n, 12)`` float64 channel vectors at the given pixels."""
        return self.channels[:, ys, xs].T.astype(np.float64)


@dataclass(frozen=True)
class CorrectionConfig:
    k: int = 5
    dilation_iterations: int = 5
    min_training_pixels: int = 50
    max_dilation_iterations: int = 15
    se: StructuringElement = field(default_factory=StructuringElement.rect)
    normalize: bool = False  # per-ring z-scoring of channels
    connectivity: int = 8
    workers: int = 1

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("k must be >= 1")
        if self.min_training_pixels < self.k:
            raise ValueError("min_training_pixels must be >= k")
        if not 1 <= self.dilation_iterations <= self.max_dilation_iterations:
            raise ValueError("need 1 <= dilation_iterations <= max_dilation_iterations")
        if self.workers < 1:
            raise ValueError("workers must be >= 1")


@dataclass(frozen=True, eq=False)
class TrainingRing:
    """Training samples (row-major order) from the band around one region."""

    ys: np.ndarray
    xs: np.ndarray
    vectors: np.ndarray  # (n, 12)
    labels: np.ndarray  # (n,)
    dilation: int = 0
    usable: bool = True

    @property
    def size(self) -> int:
        return int(self.labels.size)


class RegionStatus(str, enum.Enum):
    CORRECTED = "corrected"
    UNCORRECTABLE = "uncorrectable"


@dataclass
class RegionReport:
    id: int
    size: int
    training_size: int
    dilation: int
    status: RegionStatus
    ring_label_min: int | None = None
    ring_label_max: int | None = None
    ring_labels: list[int] = field(default_factory=list)


@dataclass
class CorrectionReport:
    regions: list[RegionReport] = field(default_factory=list)

    @property
    def corrected_pixels(self) -> int:
        return sum(r.size for r in self.regions if r.status == RegionStatus.CORRECTED)

    @property
    def uncorrectable_pixels(self) -> int:
        return sum(r.size for r in self.regions if r.status == RegionStatus.UNCORRECTABLE)

    def to_dict(self) -> dict:
        regions = []
        for r in self.regions:
            d = asdict(r)
            d["status"] = r.status.value
            regions.append(d)
        return {
            "region_count": len(self.regions),
            "corrected_regions": sum(r.status == RegionStatus.CORRECTED for r in self.regions),
            "uncorrectable_regions": sum(r.status == RegionStatus.UNCORRECTABLE for r in self.regions),
            "corrected_pixels": self.corrected_pixels,
            "uncorrectable_pixels": self.uncorrectable_pixels,
            "regions": regions,
        }


def build_correction_mask(artifact: PixelMask, shadow: PixelMask) -> PixelMask:
    """Union of the artifact and shadow masks."""
    check_same_grid(artifact, shadow)
    return PixelMask(artifact.spec, artifact.bits | shadow.bits, MaskRole.CORRECTION)


def extract_training_ring(region: Region, correction_mask: PixelMask, valid_mask: PixelMask,
                          frame: RadarFrame, msg: MsgFrame,
                          config: CorrectionConfig = CorrectionConfig()) -> TrainingRing:
    """Grow the band around ``region`` until it holds enough valid samples.

    Starts at ``dilation_iterations`` and adds one dilation at a time up to
    ``max_dilation_iterations``; the ring is flagged unusable if it is still
    too small.
    """
    spec = frame.spec
    fp = config.se.footprint()
    ry = (fp.shape[0] // 2) * config.max_dilation_iterations
    rx = (fp.shape[1] // 2) * config.max_dilation_iterations
    x0, y0, x1, y1 = region.bbox
    cy0, cy1 = max(0, y0 - ry), min(spec.height, y1 + ry + 1)
    cx0, cx1 = max(0, x0 - rx), min(spec.width, x1 + rx + 1)
    inside = np.zeros((cy1 - cy0, cx1 - cx0), dtype=bool)
    inside[region.ys - cy0, region.xs - cx0] = True
    allowed = valid_mask.bits[cy0:cy1, cx0:cx1] & ~correction_mask.bits[cy0:cy1, cx0:cx1] & ~inside
    need = max(config.min_training_pixels, config.k)
    grown = ndimage.binary_dilation(inside, fp, iterations=config.dilation_iterations)
    d = config.dilation_iterations
    while True:
        ring = grown & allowed
        if ring.sum() >= need or d >= config.max_dilation_iterations:
            break
        grown = ndimage.binary_dilation(grown, fp)
        d += 1
    ys, xs = np.nonzero(ring)
    ys = ys + cy0
    xs = xs + cx0
    return TrainingRing(
        ys, xs, msg.vectors(ys, xs), frame.labels[ys, xs].astype(np.int64), d, ys.size >= need
    )


def _select_k(d2: np.ndarray, k: int) -> np.ndarray:
    """Boolean selection of the k smallest entries per row, ties to lower column."""
    n = d2.shape[1]
    if n <= k:
        return np.ones(d2.shape, dtype=bool)
    kth = np.partition(d2, k - 1, axis=1)[:, k - 1 : k]
    less = d2 < kth
    need = k - less.sum(axis=1, keepdims=True)
    eq = d2 == kth
    return less | (eq & (np.cumsum(eq, axis=1) <= need))


def _rounded_mean(label_sums: np.ndarray, k: int) -> np.ndarray:
    # round half up of sum / k in exact integer arithmetic
    return np.clip((2 * label_sums + k) // (2 * k), 0, N_LABELS - 1)


def knn_predict_many(queries: np.ndarray, ring: TrainingRing, k: int,
                     chunk_elements: int = 4_000_000) -> np.ndarray:
    """Labels for many query vectors; see :func:`knn_predict`."""
    queries = np.atleast_2d(np.asarray(queries, dtype=np.float64))
    if ring.size < k:
        raise RuntimeError(f"training ring has {ring.size} samples, fewer than k={k}")
    samples = ring.vectors
    labels = ring.labels.astype(np.int64)
    out = np.empty(queries.shape[0], dtype=np.int64)
    step = max(1, chunk_elements // max(ring.size, 1))
    for start in range(0, queries.shape[0], step):
        q = queries[start : start + step]
        d2 = np.zeros((q.shape[0], ring.size))
        for c in range(samples.shape[1]):
            diff = q[:, c : c + 1] - samples[None, :, c]
            d2 += diff * diff
        sel = _select_k(d2, k)
        out[start : start + step] = _rounded_mean(sel.astype(np.int64) @ labels, k)
    return out


def knn_predict(query, ring: TrainingRing, k: int) -> int:
    """Rounded mean label of the k training samples nearest to ``query``.

    Distances are Euclidean over the satellite channels; equal distances are
    resolved in favour of the sample that comes first in row-major order.
    """
    return int(knn_predict_many(np.asarray(query, dtype=np.float64)[None, :], ring, k)[0])


def _normalise(ring: TrainingRing, queries: np.ndarray):
    mu = ring.vectors.mean(axis=0)
    sd = ring.vectors.std(axis=0)
    sd[sd == 0] = 1.0
    scaled = TrainingRing(ring.ys, ring.xs, (ring.vectors - mu) / sd, ring.labels, ring.dilation, ring.usable)
    return scaled, (queries - mu) / sd


def _correct_region(region, correction_mask, valid_mask, frame, msg, config):
    ring = extract_training_ring(region, correction_mask, valid_mask, frame, msg, config)
    ring_labels = sorted(set(ring.labels.tolist()))
    report = RegionReport(
        region.id, region.size, ring.size, ring.dilation, RegionStatus.UNCORRECTABLE,
        min(ring_labels) if ring_labels else None, max(ring_labels) if ring_labels else None,
        ring_labels,
    )
    if not ring.usable:
        return report, None
    queries = msg.vectors(region.ys, region.xs)
    if config.normalize:
        ring, queries = _normalise(ring, queries)
    pred = knn_predict_many(queries, ring, config.k)
    report.status = RegionStatus.CORRECTED
    return report, pred


def correct_frame(frame: RadarFrame, correction_mask: PixelMask, msg: MsgFrame,
                  config: CorrectionConfig = CorrectionConfig()) -> tuple[RadarFrame, CorrectionReport]:
    """Fill every region of the correction mask; pixels outside it are untouched.

    Regions without enough training samples stay invalid (label 0) and are
    listed as uncorrectable in the report.
    """
    check_same_grid(frame, correction_mask, msg)
    regions = connected_components(correction_mask, config.connectivity)
    valid_mask = PixelMask(frame.spec, frame.valid, MaskRole.VALID)
    labels = frame.labels.copy()
    valid = frame.valid.copy()

    def work(region):
        return _correct_region(region, correction_mask, valid_mask, frame, msg, config)

    if config.workers > 1 and len(regions) > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            results = list(pool.map(work, regions))
    else:
        results = [work(r) for r in regions]

    report = CorrectionReport()
    for region, (rep, pred) in zip(regions, results):
        report.regions.append(rep)
        if pred is None:
            labels[region.ys, region.xs] = 0
            valid[region.ys, region.xs] = False
        else:
            labels[region.ys, region.xs] = pred
            valid[region.ys, region.xs] = True
    return RadarFrame(frame.spec, labels, valid, frame.timestamp), report
