"""
Fusion of texture and geometry evidence, with temporal confirmation.

Spoke and ring detections are strong candidates and pass straight through.
Texture-only detections are weak; they survive only if the same spot held
no precipitation in the available predecessor frames (artifacts are
short-lived, storms persist), up to a small spatial tolerance for advection.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np
from scipy import ndimage

from .geometry import RingDetectorConfig, SpokeDetectorConfig, detect_rings, detect_spokes
from .grid import GridSpec, MaskRole, PixelMask, RadarFrame, RadarStationConfig, check_same_grid
from .texture import TextureLibrary, segment_texture

__all__ = [
    "FrameHistory",
    "FusionConfig",
    "CandidateMask",
    "DetectionConfig",
    "FusionReport",
    "fuse_spatial",
    "temporal_confirm",
    "build_artifact_mask",
]


@dataclass(frozen=True, eq=False)
class CandidateMask:
    """Artifact candidates with a strong/weak flag per pixel."""

    spec: GridSpec
    strong: np.ndarray
    weak: np.ndarray

    @property
    def bits(self) -> np.ndarray:
        return self.strong | self.weak

    def to_mask(self) -> PixelMask:
        return PixelMask(self.spec, self.bits, MaskRole.ARTIFACT_CANDIDATE)


@dataclass(frozen=True)
class FusionConfig:
    temporal_tolerance: int = 2
    require_both_predecessors: bool = False

    def __post_init__(self):
        if self.temporal_tolerance < 0:
            raise ValueError("temporal_tolerance must be >= 0")


@dataclass(eq=False)
class FrameHistory:
    """The current frame and up to two predecessors, most recent first.

    Predecessors further than ``max_gap`` seconds before the current frame
    are dropped. ``predecessor_candidates`` optionally carries each
    predecessor's own candidate mask.
    """

    current: RadarFrame
    predecessors: list[RadarFrame] = field(default_factory=list)
    nominal_interval: int = 300
    max_gap: int = 900
    predecessor_candidates: list[PixelMask | None] | None = None

    def __post_init__(self):
        if len(self.predecessors) > 2:
            raise ValueError("at most two predecessor frames are supported")
        times = [self.current.timestamp] + [p.timestamp for p in self.predecessors]
        if any(b >= a for a, b in zip(times, times[1:])):
            raise ValueError(f"timestamps must strictly decrease into the past, got {times}")
        for p in self.predecessors:
            check_same_grid(self.current, p)
        if self.predecessor_candidates is not None and len(self.predecessor_candidates) != len(self.predecessors):
            raise ValueError("predecessor_candidates must match predecessors")

    def gaps(self) -> list[int]:
        return [self.current.timestamp - p.timestamp for p in self.predecessors]

    def available(self) -> list[tuple[RadarFrame, PixelMask | None]]:
        cands = self.predecessor_candidates or [None] * len(self.predecessors)
        return [(p, c) for p, c, g in zip(self.predecessors, cands, self.gaps()) if g <= self.max_gap]

    def dropped(self) -> list[RadarFrame]:
        return [p for p, g in zip(self.predecessors, self.gaps()) if g > self.max_gap]

    def degraded(self) -> bool:
        gaps = [self.current.timestamp - p.timestamp for p, _ in self.available()]
        if len(gaps) < 2:
            return True
        return any(g > (i + 1) * self.nominal_interval for i, g in enumerate(gaps))


def fuse_spatial(texture: PixelMask, spokes: PixelMask, rings: PixelMask) -> CandidateMask:
    """Union of all detections; geometry makes a pixel strong."""
    spec = check_same_grid(texture, spokes, rings)
    strong = spokes.bits | rings.bits
    return CandidateMask(spec, strong, texture.bits & ~strong)


def _neighbourhood_any(bits: np.ndarray, tol: int) -> np.ndarray:
    if tol == 0:
        return bits
    return ndimage.maximum_filter(bits, size=2 * tol + 1, mode="constant", cval=0)


def _confirm(candidates: CandidateMask, history: FrameHistory, config: FusionConfig):
    check_same_grid(candidates, history.current)
    usable = history.available()
    weak = candidates.weak
    if not usable:
        keep = weak & (not config.require_both_predecessors)
    elif config.require_both_predecessors and len(usable) < 2:
        keep = np.zeros_like(weak)
    else:
        keep = weak.copy()
        for frame, cand in usable:
            clear = ~_neighbourhood_any(frame.labels > 0, config.temporal_tolerance)
            if cand is not None:
                clear |= _neighbourhood_any(cand.bits, config.temporal_tolerance)
            keep &= clear
    return candidates.strong | keep, keep, usable


def temporal_confirm(candidates: CandidateMask, history: FrameHistory,
                     config: FusionConfig = FusionConfig()) -> PixelMask:
    """Final artifact mask: strong candidates plus weak ones not seen persisting.

    A weak pixel is kept only if, in every available predecessor, there is
    no precipitation within ``temporal_tolerance`` pixels of it, or the
    predecessor's own candidate mask flagged that neighbourhood. With no
    usable predecessor the texture decision stands unless
    ``require_both_predecessors`` is set.
    """
    final, _, _ = _confirm(candidates, history, config)
    return PixelMask(candidates.spec, final, MaskRole.ARTIFACT)


@dataclass(frozen=True)
class DetectionConfig:
    stride: int = 2
    spokes: SpokeDetectorConfig = field(default_factory=SpokeDetectorConfig)
    rings: RingDetectorConfig = field(default_factory=RingDetectorConfig)
    fusion: FusionConfig = field(default_factory=FusionConfig)
    workers: int = 1


@dataclass
class FusionReport:
    texture_pixels: int = 0
    spoke_pixels: list[int] = field(default_factory=list)
    ring_pixels: int = 0
    strong_pixels: int = 0
    weak_pixels: int = 0
    confirmed_weak_pixels: int = 0
    artifact_pixels: int = 0
    current_timestamp: int = 0
    predecessors_used: list[int] = field(default_factory=list)
    predecessors_dropped: list[int] = field(default_factory=list)
    degraded: bool = False

    @property
    def mode(self) -> str:
        if not self.predecessors_used:
            return "no-history"
        return "degraded" if self.degraded else "full-history"

    def to_dict(self) -> dict:
        return {
            "texture_pixels": self.texture_pixels,
            "spoke_pixels": list(self.spoke_pixels),
            "ring_pixels": self.ring_pixels,
            "strong_pixels": self.strong_pixels,
            "weak_pixels": self.weak_pixels,
            "confirmed_weak_pixels": self.confirmed_weak_pixels,
            "artifact_pixels": self.artifact_pixels,
            "current_timestamp": self.current_timestamp,
            "predecessors_used": list(self.predecessors_used),
            "predecessors_dropped": list(self.predecessors_dropped),
            "degraded": self.degraded,
            "mode": self.mode,
        }


def build_artifact_mask(history: FrameHistory, library: TextureLibrary,
                        stations: RadarStationConfig,
                        config: DetectionConfig = DetectionConfig(),
                        texture: PixelMask | None = None) -> tuple[PixelMask, FusionReport]:
    """Full detection path for the current frame of ``history``.

    ``texture`` may be passed to reuse an already computed texture mask.
    """
    frame = history.current

    def run_texture():
        return texture if texture is not None else segment_texture(frame, library, config.stride)

    def run_spokes(station):
        return detect_spokes(frame, station, config.spokes)

    def run_rings():
        return detect_rings(frame, stations, config.rings)

    if config.workers > 1:
        with ThreadPoolExecutor(max_workers=config.workers) as pool:
            tex_f = pool.submit(run_texture)
            ring_f = pool.submit(run_rings)
            spoke_list = list(pool.map(run_spokes, stations))
            tex, rings = tex_f.result(), ring_f.result()
    else:
        tex = run_texture()
        spoke_list = [run_spokes(s) for s in stations]
        rings = run_rings()

    spoke_bits = np.zeros(frame.spec.shape, dtype=bool)
    for m in spoke_list:
        spoke_bits |= m.bits
    spokes = PixelMask(frame.spec, spoke_bits, MaskRole.ARTIFACT_CANDIDATE)
    candidates = fuse_spatial(tex, spokes, rings)
    final, kept, usable = _confirm(candidates, history, config.fusion)
    report = FusionReport(
        texture_pixels=tex.count,
        spoke_pixels=[m.count for m in spoke_list],
        ring_pixels=rings.count,
        strong_pixels=int(candidates.strong.sum()),
        weak_pixels=int(candidates.weak.sum()),
        confirmed_weak_pixels=int(kept.sum()),
        artifact_pixels=int(final.sum()),
        current_timestamp=frame.timestamp,
        predecessors_used=[p.timestamp for p, _ in usable],
        predecessors_dropped=[p.timestamp for p in history.dropped()],
        degraded=history.degraded(),
    )
    return PixelMask(frame.spec, final, MaskRole.ARTIFACT), report
