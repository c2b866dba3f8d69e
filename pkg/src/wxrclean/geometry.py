"""
Station-centred geometric detectors.

Spokes (radial interference) become vertical structures in the polar raster
around the emitting station. Rings are found with a circle Hough transform
whose centres are fixed to the stations, so the accumulator is a radius
histogram per station. Shadow sectors are azimuth ranges whose long-run
precipitation sum is far below that of the other azimuths.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Iterable

import numpy as np
from scipy import ndimage

from .grid import (
    DEFAULT_SCALE,
    GridSpec,
    MaskRole,
    PixelMask,
    RadarFrame,
    RadarStation,
    RadarStationConfig,
    ReflectivityScale,
)
from .morphology import StructuringElement, binary_morph, label_components
from .polar import DEFAULT_THETA_BINS, PolarImage, from_polar, sample_polar, to_polar

__all__ = [
    "SpokeDetectorConfig",
    "RingDetectorConfig",
    "SumImage",
    "ShadowSector",
    "ShadowSectorSet",
    "detect_spokes",
    "detect_rings",
    "ring_accumulator",
    "accumulate_sum",
    "derive_shadow_sectors",
    "sector_footprint",
    "current_shadow_mask",
]

TWO_PI = 2.0 * math.pi


@dataclass(frozen=True)
class SpokeDetectorConfig:
    """Thresholds for radial spoke extraction in polar space.

    ``narrow_width_px`` keeps anything at most that many cartesian pixels
    wide when close to the station, where one pixel spans many azimuth
    columns. Collinear pieces at least ``bridge_min_piece`` km long are
    measured as one spoke when the range gap between them is at least
    ``bridge_fill`` precipitation.
    """

    min_radial_extent: float = 30.0
    max_angular_width: int = 6
    elongation_ratio: float = 5.0
    closing_se: StructuringElement = field(default_factory=lambda: StructuringElement.vertical_line(5))
    dr: float = 0.5
    theta_bins: int = DEFAULT_THETA_BINS
    narrow_width_px: float = 2.0
    bridge_fill: float = 0.8
    bridge_min_piece: float = 5.0

    def __post_init__(self):
        if not (self.min_radial_extent > 0 and self.max_angular_width > 0
                and self.elongation_ratio > 0 and self.dr > 0 and self.theta_bins > 0):
            raise ValueError("spoke detector thresholds must be positive")


@dataclass(frozen=True)
class RingDetectorConfig:
    """Constrained circle Hough settings.

    Only pixels of connected objects with at most ``max_object_size`` pixels
    vote (rings are chains of small echoes); ``None`` lets every
    precipitation pixel vote.
    """

    radius_bin: float = 1.0
    occupancy_threshold: float = 0.15
    min_radius: float = 5.0
    max_radius: float = 225.0
    max_object_size: int | None = 25

    def __post_init__(self):
        if not 0 < self.occupancy_threshold <= 1:
            raise ValueError("occupancy_threshold must lie in (0, 1]")
        if not 0 < self.min_radius < self.max_radius:
            raise ValueError("need 0 < min_radius < max_radius")
        if not self.radius_bin > 0:
            raise ValueError("radius_bin must be positive")


def _polar_geometry(station: RadarStation, dr: float, theta_bins: int):
    r_bins = max(1, int(round(station.range_km / dr)))
    return r_bins * dr, r_bins, theta_bins


def _horizontal_runs(bits: np.ndarray):
    """Label azimuthal runs per range row, joining runs across the 0/2pi seam."""
    structure = np.array([[0, 0, 0], [1, 1, 1], [0, 0, 0]], dtype=bool)
    labels, n = ndimage.label(bits, structure=structure)
    if n == 0 or bits.shape[1] < 2:
        return labels, n
    seam = (labels[:, 0] > 0) & (labels[:, -1] > 0) & (labels[:, 0] != labels[:, -1])
    remap = np.arange(n + 1)
    remap[labels[seam, -1]] = labels[seam, 0]
    return remap[labels], n


def _row_limits(radii: np.ndarray, dtheta: float, config: SpokeDetectorConfig, cell_size: float) -> np.ndarray:
    """Widest azimuthal run (columns) still counted as narrow, per range row."""
    near = np.ceil(config.narrow_width_px * cell_size / (radii * dtheta))
    return np.maximum(config.max_angular_width, near)


def _narrow_structures(bits: np.ndarray, limits: np.ndarray) -> np.ndarray:
    runs, n = _horizontal_runs(bits)
    if n == 0:
        return bits.copy()
    widths = np.bincount(runs.ravel(), minlength=n + 1)
    rows = np.broadcast_to(np.arange(bits.shape[0])[:, None], bits.shape)
    return bits & (widths[runs] <= limits[rows])


def _component_stats(labels: np.ndarray, n: int, radii: np.ndarray, dtheta: float, limits: np.ndarray):
    """Per component: row span, pixel count, and two median row widths.

    ``ratio`` is the median of row width over that row's narrow limit, so
    ``ratio <= 1`` means narrow; ``km`` is the median tangential width.
    """
    rr, _ = np.nonzero(labels)
    lab = labels[labels > 0]
    rmin = np.full(n + 1, np.iinfo(np.intp).max)
    rmax = np.full(n + 1, -1)
    np.minimum.at(rmin, lab, rr)
    np.maximum.at(rmax, lab, rr)
    size = np.bincount(lab, minlength=n + 1)
    key = lab.astype(np.int64) * labels.shape[0] + rr
    uniq, counts = np.unique(key, return_counts=True)
    comp = uniq // labels.shape[0]
    row = uniq % labels.shape[0]
    ratio_rows = counts / limits[row]
    km_rows = counts * dtheta * radii[row]
    ratio = np.zeros(n + 1)
    km = np.zeros(n + 1)
    bounds = np.flatnonzero(np.diff(comp)) + 1
    for c, r_, k_ in zip(np.split(comp, bounds), np.split(ratio_rows, bounds), np.split(km_rows, bounds)):
        ratio[c[0]] = np.median(r_)
        km[c[0]] = np.median(k_)
    return rmin, rmax, size, ratio, km


def _bridge_through_storms(labels: np.ndarray, n: int, closed: np.ndarray, narrow: np.ndarray,
                           extent: np.ndarray, config: SpokeDetectorConfig) -> np.ndarray:
    """Group id per component, joining collinear pieces split by a storm.

    Two narrow pieces sharing azimuth columns are joined when the range gap
    between them is (almost) filled with precipitation in those columns; a
    spoke passing through a storm leaves exactly this pattern.
    """
    group = np.arange(n + 1)
    cand = [i for i in range(1, n + 1)
            if narrow[i] and extent[i] >= config.bridge_min_piece]
    if len(cand) < 2:
        return group
    objects = ndimage.find_objects(labels)
    info = []
    for i in cand:
        sl = objects[i - 1]
        sub = labels[sl] == i
        rows = np.flatnonzero(sub.any(axis=1)) + sl[0].start
        cols = np.flatnonzero(sub.any(axis=0)) + sl[1].start
        info.append((i, rows.min(), rows.max(), set(cols.tolist())))
    # seam-merged components may span the whole width; fine for set overlap
    info.sort(key=lambda t: t[1])

    def find(a):
        while group[a] != a:
            group[a] = group[group[a]]
            a = group[a]
        return a

    for a in range(len(info)):
        ia, _, a_hi, a_cols = info[a]
        for b in range(a + 1, len(info)):
            ib, b_lo, _, b_cols = info[b]
            if b_lo <= a_hi:
                continue
            shared = sorted(a_cols & b_cols)
            if not shared:
                continue
            gap = closed[a_hi + 1 : b_lo][:, shared]
            if gap.size == 0 or gap.mean() >= config.bridge_fill:
                ra, rb = find(ia), find(ib)
                group[max(ra, rb)] = min(ra, rb)
    return np.array([find(i) for i in range(n + 1)])


def detect_spokes(frame: RadarFrame, station: RadarStation,
                  config: SpokeDetectorConfig = SpokeDetectorConfig()) -> PixelMask:
    """Mask of precipitation pixels forming radial spokes from ``station``.

    Steps: binarise precipitation, resample to polar, close along range,
    drop azimuthally wide structures (storms), label, keep components that
    are long in range, narrow in azimuth and elongated, reproject.
    """
    prec = PixelMask(frame.spec, frame.precipitation & frame.valid)
    out = PixelMask.empty(frame.spec, MaskRole.ARTIFACT_CANDIDATE)
    if not prec.bits.any():
        return out
    r_max, r_bins, theta_bins = _polar_geometry(station, config.dr, config.theta_bins)
    polar = to_polar(prec, (station.x, station.y), r_max, r_bins, theta_bins)
    closed = binary_morph(polar.values, "close", config.closing_se.footprint(), 1, wrap_axis=1)
    limits = _row_limits(polar.radii, polar.dtheta, config, frame.spec.cell_size)
    thin = _narrow_structures(closed, limits)
    labels, n = label_components(thin, 8, wrap_axis=1)
    if n == 0:
        return out
    rmin, rmax, size, ratio, km = _component_stats(labels, n, polar.radii, polar.dtheta, limits)
    narrow = ratio <= 1.0
    group = _bridge_through_storms(labels, n, closed, narrow, (rmax - rmin + 1) * polar.dr, config)
    g_lo = np.full(n + 1, np.iinfo(np.intp).max)
    g_hi = np.full(n + 1, -1)
    g_km = np.zeros(n + 1)
    g_narrow = np.ones(n + 1, dtype=bool)
    np.minimum.at(g_lo, group[1:], rmin[1:])
    np.maximum.at(g_hi, group[1:], rmax[1:])
    np.maximum.at(g_km, group[1:], km[1:])
    np.logical_and.at(g_narrow, group[1:], narrow[1:])
    extent = (g_hi - g_lo + 1) * polar.dr
    group_ok = (
        g_narrow
        & (extent >= config.min_radial_extent)
        & (extent / np.maximum(g_km, polar.dr) >= config.elongation_ratio)
    )
    keep = group_ok[group]
    keep[0] = False
    accepted = keep[labels]
    if not accepted.any():
        return out
    # one-bin halo absorbs nearest-neighbour slack in the reprojection, but
    # must not spill onto the wide structures removed above
    accepted = binary_morph(accepted, "dilate", np.ones((3, 3), bool), 1, wrap_axis=1)
    accepted &= ~(closed & ~thin)
    mask = from_polar(polar.with_values(accepted), frame.spec)
    return PixelMask(frame.spec, mask.bits & prec.bits, MaskRole.ARTIFACT_CANDIDATE)


@lru_cache(maxsize=16)
def _distance_grid(spec: GridSpec, station: RadarStation) -> np.ndarray:
    d = station.distance_grid(spec)
    d.setflags(write=False)
    return d


def _ring_voters(frame: RadarFrame, config: RingDetectorConfig) -> np.ndarray:
    prec = frame.precipitation & frame.valid
    if config.max_object_size is None or not prec.any():
        return prec
    labels, n = label_components(prec, 8)
    sizes = np.bincount(labels.ravel(), minlength=n + 1)
    small = sizes <= config.max_object_size
    small[0] = False
    return small[labels]


def ring_accumulator(voters: np.ndarray, spec: GridSpec, station: RadarStation,
                     config: RingDetectorConfig = RingDetectorConfig()) -> np.ndarray:
    """Votes per radius bin; bin ``b`` collects distances in ``[(b-1/2)w, (b+1/2)w)``."""
    d = _distance_grid(spec, station)
    bins = np.floor(d / config.radius_bin + 0.5).astype(np.intp)
    n_bins = int(math.floor(config.max_radius / config.radius_bin + 0.5)) + 2
    sel = voters & (bins < n_bins)
    return np.bincount(bins[sel], minlength=n_bins)


def ring_peaks(counts: np.ndarray, spec: GridSpec, config: RingDetectorConfig) -> np.ndarray:
    b = np.arange(counts.size)
    radius = b * config.radius_bin
    circumference = TWO_PI * radius / spec.cell_size
    in_range = (radius >= config.min_radius) & (radius <= config.max_radius)
    return np.flatnonzero(in_range & (counts > 0) & (counts >= config.occupancy_threshold * circumference))


def detect_rings(frame: RadarFrame, stations: RadarStationConfig,
                 config: RingDetectorConfig = RingDetectorConfig()) -> PixelMask:
    """Voting pixels lying within one bin of a station-centred radius peak."""
    voters = _ring_voters(frame, config)
    bits = np.zeros(frame.spec.shape, dtype=bool)
    if not voters.any():
        return PixelMask(frame.spec, bits, MaskRole.ARTIFACT_CANDIDATE)
    for station in stations:
        counts = ring_accumulator(voters, frame.spec, station, config)
        peaks = ring_peaks(counts, frame.spec, config)
        if peaks.size == 0:
            continue
        hit = np.zeros(counts.size + 2, dtype=bool)
        for off in (-1, 0, 1):
            hit[np.clip(peaks + off, 0, hit.size - 1)] = True
        d = _distance_grid(frame.spec, station)
        bins = np.minimum(np.floor(d / config.radius_bin + 0.5).astype(np.intp), hit.size - 1)
        bits |= voters & hit[bins]
    return PixelMask(frame.spec, bits, MaskRole.ARTIFACT_CANDIDATE)


@dataclass(frozen=True, eq=False)
class SumImage:
    """Per-pixel reflectivity sum over a sequence of frames.

    Held as an integer count of hundredths of dBZ so that the result does not
    depend on the order in which frames were added.
    """

    spec: GridSpec
    centi_dbz: np.ndarray
    frame_count: int

    def __post_init__(self):
        if self.centi_dbz.shape != self.spec.shape:
            raise ValueError("sum array does not match the grid")
        if self.frame_count < 1:
            raise ValueError("frame_count must be >= 1")
        if np.any(self.centi_dbz < 0):
            raise ValueError("sums must be non-negative")

    @property
    def sums(self) -> np.ndarray:
        return self.centi_dbz / 100.0

    def merge(self, other: "SumImage") -> "SumImage":
        if other.spec != self.spec:
            raise ValueError("cannot merge sums over different grids")
        return SumImage(self.spec, self.centi_dbz + other.centi_dbz, self.frame_count + other.frame_count)


def accumulate_sum(frames: Iterable[RadarFrame], scale: ReflectivityScale = DEFAULT_SCALE) -> SumImage:
    """Fold a (possibly long) stream of frames into a :class:`SumImage`."""
    acc = None
    spec = None
    count = 0
    centi = np.round(scale.table * 100.0).astype(np.int64)
    for frame in frames:
        if spec is None:
            spec = frame.spec
            acc = np.zeros(spec.shape, dtype=np.int64)
        elif frame.spec != spec:
            raise ValueError(f"frame grid {frame.spec} differs from {spec}")
        acc += centi[frame.labels]
        count += 1
    if spec is None:
        raise ValueError("cannot accumulate an empty frame stream")
    return SumImage(spec, acc, count)


@dataclass(frozen=True)
class ShadowSector:
    station: int
    theta_start: float
    theta_end: float
    r_start: float
    r_end: float

    def __post_init__(self):
        end = self.theta_end
        if TWO_PI < end <= TWO_PI + 1e-5:  # tolerate 6-digit text rounding
            object.__setattr__(self, "theta_end", TWO_PI)
        if not 0 <= self.theta_start < self.theta_end <= TWO_PI:
            raise ValueError(f"need 0 <= theta_start < theta_end <= 2pi, got {self.theta_start}, {end}")
        if not 0 <= self.r_start < self.r_end:
            raise ValueError(f"need 0 <= r_start < r_end, got {self.r_start}, {self.r_end}")

    @property
    def width(self) -> float:
        return self.theta_end - self.theta_start


@dataclass(frozen=True)
class ShadowSectorSet:
    sectors: tuple[ShadowSector, ...] = ()

    def __post_init__(self):
        sectors = tuple(sorted(self.sectors, key=lambda s: (s.station, s.theta_start)))
        for a, b in zip(sectors, sectors[1:]):
            if a.station == b.station and b.theta_start < a.theta_end:
                raise ValueError(f"overlapping sectors for station {a.station}")
        object.__setattr__(self, "sectors", sectors)

    def __len__(self):
        return len(self.sectors)

    def __iter__(self):
        return iter(self.sectors)

    def for_station(self, index: int) -> list[ShadowSector]:
        return [s for s in self.sectors if s.station == index]


def _circular_runs(flags: np.ndarray) -> list[tuple[int, int]]:
    """Maximal runs of True as ``(start, length)``, allowing wrap-around."""
    n = flags.size
    if not flags.any():
        return []
    if flags.all():
        return [(0, n)]
    start = int(np.flatnonzero(~flags)[0]) + 1  # first column after a False
    rolled = np.roll(flags, -start)
    runs = []
    i = 0
    while i < n:
        if rolled[i]:
            j = i
            while j < n and rolled[j]:
                j += 1
            runs.append(((i + start) % n, j - i))
            i = j
        else:
            i += 1
    return runs


def derive_shadow_sectors(sum_image: SumImage, stations: RadarStationConfig, tau: float = 0.2,
                          r_inner: float = 10.0, dr: float = 0.5,
                          theta_bins: int = DEFAULT_THETA_BINS, min_run: int = 2) -> ShadowSectorSet:
    """Azimuth sectors whose mean sum over ``[r_inner, range]`` is below tau x median.

    Column means only use bins that fall inside the grid; azimuths that
    leave the grid entirely take no part.
    """
    sums = sum_image.sums
    if not np.any(sums > 0):
        raise RuntimeError("sum image is all zero; no statistics to derive shadows from")
    sectors = []
    dtheta = TWO_PI / theta_bins
    for idx, st in enumerate(stations):
        r_max, r_bins, _ = _polar_geometry(st, dr, theta_bins)
        values, inside = sample_polar(sums, sum_image.spec, (st.x, st.y), r_max, r_bins, theta_bins)
        radii = (np.arange(r_bins) + 0.5) * dr
        rows = (radii >= r_inner) & (radii <= st.range_km)
        inside = inside & rows[:, None]
        n_in = inside.sum(axis=0)
        with np.errstate(invalid="ignore", divide="ignore"):
            col_mean = np.where(n_in > 0, (values * inside).sum(axis=0) / n_in, np.nan)
        if not np.any(n_in > 0):
            continue
        median = float(np.nanmedian(col_mean))
        if not median > 0:
            raise RuntimeError(f"station {idx}: median azimuthal sum is not positive")
        low = np.nan_to_num(col_mean, nan=np.inf) < tau * median
        for start, length in _circular_runs(low):
            if length < min_run:
                continue
            end = start + length
            pieces = [(start, end)] if end <= theta_bins else [(start, theta_bins), (0, end - theta_bins)]
            for a, b in pieces:
                sectors.append(ShadowSector(idx, a * dtheta, min(b * dtheta, TWO_PI), r_inner, st.range_km))
    return ShadowSectorSet(tuple(sectors))


def sector_footprint(sector: ShadowSector, station: RadarStation, spec: GridSpec) -> np.ndarray:
    """Pixels whose centre lies in ``[r_start, r_end] x [theta_start, theta_end)``."""
    d = _distance_grid(spec, station)
    az = station.azimuth_grid(spec)
    return (d >= sector.r_start) & (d <= sector.r_end) & (az >= sector.theta_start) & (az < sector.theta_end)


def footprint_mask(sectors: ShadowSectorSet, stations: RadarStationConfig, spec: GridSpec,
                   role: MaskRole = MaskRole.SHADOW) -> PixelMask:
    bits = np.zeros(spec.shape, dtype=bool)
    for s in sectors:
        bits |= sector_footprint(s, stations[s.station], spec)
    return PixelMask(spec, bits, role)


def _occupancy(polar_prec: np.ndarray, inside: np.ndarray, rows: np.ndarray, cols: np.ndarray) -> float:
    cols = np.mod(cols, polar_prec.shape[1])
    block_in = inside[np.ix_(rows, cols)]
    if not block_in.any():
        return 0.0
    return float(polar_prec[np.ix_(rows, cols)][block_in].mean())


def current_shadow_mask(frame: RadarFrame, sectors: ShadowSectorSet, stations: RadarStationConfig,
                        neighbourhood: int = 2, step_ratio: float = 3.0, min_occupancy: float = 0.02,
                        dr: float = 0.5, theta_bins: int = DEFAULT_THETA_BINS) -> PixelMask:
    """Shadow footprints confirmed by a precipitation step edge in this frame.

    At each sector boundary the ``neighbourhood`` polar columns outside the
    sector (live side) are compared with those just inside; the sector is
    masked when the live side reaches ``min_occupancy`` and at least
    ``step_ratio`` times the inside occupancy over the sector's range span.
    """
    bits = np.zeros(frame.spec.shape, dtype=bool)
    prec = PixelMask(frame.spec, frame.precipitation & frame.valid)
    if not prec.bits.any() or not len(sectors):
        return PixelMask(frame.spec, bits, MaskRole.SHADOW)
    dtheta = TWO_PI / theta_bins
    polar_cache: dict[int, PolarImage] = {}
    nb = np.arange(neighbourhood)
    for s in sectors:
        st = stations[s.station]
        if s.station not in polar_cache:
            r_max, r_bins, _ = _polar_geometry(st, dr, theta_bins)
            polar_cache[s.station] = to_polar(prec, (st.x, st.y), r_max, r_bins, theta_bins)
        polar = polar_cache[s.station]
        radii = polar.radii
        rows = np.flatnonzero((radii >= s.r_start) & (radii <= s.r_end))
        if rows.size == 0 or s.width >= TWO_PI - 1e-9:
            continue
        j0 = int(round(s.theta_start / dtheta))
        j1 = int(round(s.theta_end / dtheta))
        values = polar.values.astype(np.float64)
        evidence = False
        for live_cols, shadow_cols in ((j0 - 1 - nb, j0 + nb), (j1 + nb, j1 - 1 - nb)):
            live = _occupancy(values, polar.inside, rows, live_cols)
            dark = _occupancy(values, polar.inside, rows, shadow_cols)
            if live >= min_occupancy and live >= step_ratio * dark:
                evidence = True
                break
        if evidence:
            bits |= sector_footprint(s, st, frame.spec)
    return PixelMask(frame.spec, bits, MaskRole.SHADOW)
