"""
Evaluation metrics: confusion matrices over labels, +-1 class accuracy,
artifact detection rates, and simulated concealed-region experiments.

Confusion matrices follow the ``counts[pred, truth]`` convention: one column
per ground-truth label, normalised by that label's sample size.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .correction import CorrectionConfig, MsgFrame, correct_frame
from .grid import N_LABELS, MaskRole, PixelMask, RadarFrame, check_same_grid

__all__ = [
    "REGION_SIZES",
    "ConfusionMatrix",
    "MetricsReport",
    "confusion",
    "within_one",
    "overall_within_one",
    "detection_metrics",
    "carve_region",
    "simulate_region_eval",
]

REGION_SIZES = {"small": 100, "medium": 1000, "large": 10000}


@dataclass(frozen=True, eq=False)
class ConfusionMatrix:
    counts: np.ndarray = field(default_factory=lambda: np.zeros((N_LABELS, N_LABELS), dtype=np.int64))
    skipped: int = 0  # pixels left out by background exclusion

    def __post_init__(self):
        c = np.asarray(self.counts)
        if c.shape != (N_LABELS, N_LABELS):
            raise ValueError(f"counts must be {N_LABELS}x{N_LABELS}, got {c.shape}")
        object.__setattr__(self, "counts", c)

    @property
    def sample_sizes(self) -> np.ndarray:
        return self.counts.sum(axis=0)

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    @property
    def column_normalized(self) -> np.ndarray:
        """Columns scaled to sum to one; empty columns are NaN."""
        n = self.sample_sizes.astype(np.float64)
        with np.errstate(invalid="ignore", divide="ignore"):
            return np.where(n > 0, self.counts / n, np.nan)

    def merge(self, other: "ConfusionMatrix") -> "ConfusionMatrix":
        return ConfusionMatrix(self.counts + other.counts, self.skipped + other.skipped)

    @classmethod
    def from_normalized_excerpt(cls, excerpt, sample_sizes=None) -> "ConfusionMatrix":
        """Rebuild a matrix from a published, rounded, truncated excerpt.

        ``excerpt`` is a square column-normalised block over labels
        ``0..m-1``. Mass missing from a column (it went to labels beyond the
        excerpt) is put on label ``m``. Counts are scaled by
        ``sample_sizes`` (default 10**6 per column) and rounded.
        """
        block = np.asarray(excerpt, dtype=np.float64)
        m = block.shape[0]
        if block.shape != (m, m) or m >= N_LABELS:
            raise ValueError("excerpt must be square and smaller than the label set")
        full = np.zeros((N_LABELS, N_LABELS))
        full[:m, :m] = block
        full[m, :m] = np.clip(1.0 - block.sum(axis=0), 0.0, None)
        sizes = np.full(m, 10**6) if sample_sizes is None else np.asarray(sample_sizes)
        counts = np.zeros((N_LABELS, N_LABELS), dtype=np.int64)
        counts[:, :m] = np.round(full[:, :m] * sizes[None, :]).astype(np.int64)
        return cls(counts)


def confusion(pred: RadarFrame, truth: RadarFrame, pixels: PixelMask | np.ndarray | None = None,
              exclude_background: bool = False) -> ConfusionMatrix:
    """Count ``(pred, truth)`` label pairs over ``pixels`` (default: all)."""
    spec = check_same_grid(pred, truth)
    if pixels is None:
        sel = np.ones(spec.shape, dtype=bool)
    else:
        sel = pixels.bits if isinstance(pixels, PixelMask) else np.asarray(pixels, dtype=bool)
        if sel.shape != spec.shape:
            raise ValueError("pixel set does not match the grid")
    p = pred.labels[sel].astype(np.intp)
    t = truth.labels[sel].astype(np.intp)
    skipped = 0
    if exclude_background:
        both = (p == 0) & (t == 0)
        skipped = int(both.sum())
        p, t = p[~both], t[~both]
    counts = np.bincount(p * N_LABELS + t, minlength=N_LABELS * N_LABELS).reshape(N_LABELS, N_LABELS)
    return ConfusionMatrix(counts.astype(np.int64), skipped)


def _band(n: int) -> np.ndarray:
    idx = np.arange(n)
    return np.abs(idx[:, None] - idx[None, :]) <= 1


def within_one(matrix: ConfusionMatrix) -> np.ndarray:
    """Per truth label, the fraction predicted within one class of it (NaN if absent)."""
    norm = matrix.column_normalized
    out = np.where(_band(N_LABELS), norm, 0.0).sum(axis=0)
    out[matrix.sample_sizes == 0] = np.nan
    return out


def overall_within_one(matrix: ConfusionMatrix) -> float:
    """Pixel-weighted fraction of predictions within one class of the truth."""
    if matrix.total == 0:
        return float("nan")
    return float(matrix.counts[_band(N_LABELS)].sum() / matrix.total)


@dataclass
class MetricsReport:
    accuracy: float
    sensitivity: float
    specificity: float
    within_one_per_class: np.ndarray = field(default_factory=lambda: np.full(N_LABELS, np.nan))
    notes: list[str] = field(default_factory=list)
    tp: int = 0
    fp: int = 0
    tn: int = 0
    fn: int = 0

    def to_dict(self) -> dict:
        return {
            "accuracy": self.accuracy,
            "sensitivity": self.sensitivity,
            "specificity": self.specificity,
            "within_one_per_class": [None if np.isnan(v) else float(v) for v in self.within_one_per_class],
            "tp": self.tp, "fp": self.fp, "tn": self.tn, "fn": self.fn,
            "notes": list(self.notes),
        }


def _rate(num: int, den: int) -> float:
    return num / den if den else float("nan")


def detection_metrics(pred_mask: PixelMask, truth_mask: PixelMask, frame: RadarFrame) -> MetricsReport:
    """Pixel-level artifact detection rates, background excluded.

    The evaluation set is every pixel that is an artifact in the truth or
    non-zero in ``frame``; pixels that are background in both are ignored.
    """
    check_same_grid(pred_mask, truth_mask, frame)
    t = truth_mask.bits
    p = pred_mask.bits
    evaluated = t | (frame.labels > 0)
    if not evaluated.any():
        raise RuntimeError("evaluation set is empty: every pixel is background")
    p, t = p[evaluated], t[evaluated]
    tp = int(np.sum(p & t))
    fp = int(np.sum(p & ~t))
    tn = int(np.sum(~p & ~t))
    fn = int(np.sum(~p & t))
    notes = []
    if tp + fn == 0:
        notes.append("no artifact pixels in truth; sensitivity undefined")
    if tn + fp == 0:
        notes.append("no non-artifact pixels evaluated; specificity undefined")
    return MetricsReport(
        accuracy=(tp + tn) / p.size,
        sensitivity=_rate(tp, tp + fn),
        specificity=_rate(tn, tn + fp),
        notes=notes, tp=tp, fp=fp, tn=tn, fn=fn,
    )


def _grow(allowed: np.ndarray, seed, size: int, rng: np.random.Generator) -> np.ndarray | None:
    """Eden growth from ``seed`` over 4-connected allowed pixels."""
    h, w = allowed.shape
    region = np.zeros_like(allowed)
    queued = np.zeros_like(allowed)
    frontier = [seed]
    queued[seed] = True
    count = 0
    while frontier and count < size:
        i = int(rng.integers(len(frontier)))
        frontier[i], frontier[-1] = frontier[-1], frontier[i]
        y, x = frontier.pop()
        region[y, x] = True
        count += 1
        for ny, nx in ((y - 1, x), (y + 1, x), (y, x - 1), (y, x + 1)):
            if 0 <= ny < h and 0 <= nx < w and allowed[ny, nx] and not queued[ny, nx]:
                queued[ny, nx] = True
                frontier.append((ny, nx))
    return region if count == size else None


def carve_region(frame: RadarFrame, size: int, rng: np.random.Generator,
                 attempts: int = 20) -> PixelMask:
    """A random connected region of exactly ``size`` valid pixels.

    The region is seeded at a random precipitation pixel and grown by
    random-walk (Eden) accretion over valid pixels.
    """
    if size < 1:
        raise ValueError("region size must be >= 1")
    allowed = frame.valid
    seeds = np.argwhere(frame.precipitation & frame.valid)
    if seeds.size == 0 or allowed.sum() < size:
        raise RuntimeError("frame has no room to place a region of this size")
    for _ in range(attempts):
        y, x = seeds[rng.integers(len(seeds))]
        region = _grow(allowed, (int(y), int(x)), size, rng)
        if region is not None:
            return PixelMask(frame.spec, region, MaskRole.CORRECTION)
    raise RuntimeError(f"could not place a connected region of {size} pixels in {attempts} attempts")


def _trial(frame, msg, size, seed, trial, config, exclude_background):
    rng = np.random.default_rng([seed, trial])
    region = carve_region(frame, size, rng)
    corrected, _ = correct_frame(frame, region, msg, config)
    return confusion(corrected, frame, region, exclude_background)


def simulate_region_eval(frame: RadarFrame, msg: MsgFrame, region_size, trials: int, seed: int,
                         config: CorrectionConfig = CorrectionConfig(),
                         exclude_background: bool = False, workers: int = 1) -> ConfusionMatrix:
    """Hide random regions, fill them back in, and compare with what was hidden.

    ``region_size`` is a pixel count or one of ``small``/``medium``/``large``.
    Each trial draws from its own generator seeded by ``(seed, trial)``, so
    results do not depend on ``workers``.
    """
    size = REGION_SIZES[region_size] if isinstance(region_size, str) else int(region_size)
    check_same_grid(frame, msg)
    total = ConfusionMatrix()
    if trials <= 0:
        return total
    args = [(frame, msg, size, seed, t, config, exclude_background) for t in range(trials)]
    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            parts = list(pool.map(lambda a: _trial(*a), args))
    else:
        parts = [_trial(*a) for a in args]
    for part in parts:
        total = total.merge(part)
    return total
