"""
Synthetic radar scenes, artifacts and satellite channels.

Storms are clusters of Gaussian cells whose positions advance with a fixed
velocity, so earlier frames of the same scene are exact translations of the
storm field. Satellite channels are strictly monotone functions of the clean
reflectivity plus Gaussian noise, which makes satellite similarity imply
radar similarity by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np
from scipy import ndimage

from .correction import MSG_CHANNELS, CorrectionConfig, MsgFrame, knn_predict_many, extract_training_ring
from .geometry import ShadowSector, ShadowSectorSet, footprint_mask
from .grid import (
    REFLECTIVITY_DBZ,
    GridSpec,
    MaskRole,
    PixelMask,
    RadarFrame,
    RadarStation,
    RadarStationConfig,
    dbz_to_labels,
)
from .io import ensure_dir, write_frame
from .morphology import connected_components
from .texture import (
    DEFAULT_EPS,
    DEFAULT_WINDOW,
    GaborBankConfig,
    LibraryEntry,
    CovarianceDescriptor,
    TextureClass,
    TextureLibrary,
    build_gabor_bank,
    compute_feature_stack,
    covariance_at_sites,
)

__all__ = [
    "SpokeSpec",
    "RingSpec",
    "SyntheticSceneConfig",
    "SceneTruth",
    "SyntheticScene",
    "synth_scene",
    "inject_artifacts",
    "apply_shadow",
    "synth_history",
    "make_scene",
    "random_artifact_specs",
    "spoke_footprint",
    "ring_points",
    "synthetic_library",
    "library_scene",
    "training_sites",
    "export_patches",
    "ring_recovery_rate",
    "calibrate_msg_noise",
]

ARTIFACT_LABELS = (3, 7)  # inclusive range of injected labels
BASE_TIMESTAMP = 1_200_000_000
MAX_DBZ = REFLECTIVITY_DBZ[-1]


class SceneConfigError(ValueError):
    """Artifact or shadow geometry that does not fit the scene."""


@dataclass(frozen=True)
class SpokeSpec:
    station: int
    theta_deg: float
    width_deg: float
    extent_km: float
    start_km: float = 1.0


@dataclass(frozen=True)
class RingSpec:
    station: int
    radius_km: float
    point_count: int


@dataclass(frozen=True)
class SyntheticSceneConfig:
    seed: int = 0
    spec: GridSpec = field(default_factory=lambda: GridSpec(256, 256))
    stations: RadarStationConfig = field(default_factory=lambda: RadarStationConfig((RadarStation(128.0, 128.0),)))
    blob_count: int = 6
    blob_scale: float = 14.0
    intensity_gamma: float = 1.5
    msg_noise_sigma: float = 0.05
    velocity: tuple[float, float] = (0.8, 0.4)  # pixels per 300 s, (dx, dy)
    spoke_specs: tuple[SpokeSpec, ...] = ()
    ring_specs: tuple[RingSpec, ...] = ()
    shadow_specs: tuple[ShadowSector, ...] = ()
    timestamp: int = BASE_TIMESTAMP

    def __post_init__(self):
        if self.blob_count < 0:
            raise ValueError("blob_count must be >= 0")
        if not (self.blob_scale > 0 and self.intensity_gamma > 0):
            raise ValueError("blob_scale and intensity_gamma must be positive")
        if self.msg_noise_sigma < 0:
            raise ValueError("msg_noise_sigma must be >= 0")
        object.__setattr__(self, "spoke_specs", tuple(self.spoke_specs))
        object.__setattr__(self, "ring_specs", tuple(self.ring_specs))
        object.__setattr__(self, "shadow_specs", tuple(self.shadow_specs))


@dataclass(frozen=True, eq=False)
class SceneTruth:
    artifact: PixelMask
    spokes: tuple[PixelMask, ...]
    rings: tuple[PixelMask, ...]
    shadow: PixelMask


@dataclass(frozen=True, eq=False)
class SyntheticScene:
    config: SyntheticSceneConfig
    clean: RadarFrame
    dirty: RadarFrame
    msg: MsgFrame
    truth: SceneTruth
    predecessors: tuple[RadarFrame, ...] = ()


def _streams(seed: int):
    # independent streams so that e.g. adding an artifact never moves a storm
    storms, artifacts, noise = np.random.SeedSequence(seed).spawn(3)
    return np.random.default_rng(storms), np.random.default_rng(artifacts), np.random.default_rng(noise)


def _storm_cells(config: SyntheticSceneConfig, rng: np.random.Generator) -> list[tuple]:
    """Cells as ``(cx, cy, sx, sy, angle, peak)`` in pixels at the scene time."""
    h, w = config.spec.shape
    scale = config.blob_scale / config.spec.cell_size
    cells = []
    for _ in range(config.blob_count):
        cx, cy = rng.uniform(0, w), rng.uniform(0, h)
        strength = rng.uniform(0.55, 1.0)
        for _ in range(int(rng.integers(3, 7))):
            ox, oy = rng.normal(0, 0.6 * scale, size=2)
            sx, sy = scale * rng.uniform(0.25, 0.6, size=2)
            cells.append((cx + ox, cy + oy, sx, sy, rng.uniform(0, math.pi), strength * rng.uniform(0.5, 1.0)))
        for _ in range(int(rng.integers(0, 4))):  # small convective cores
            ox, oy = rng.normal(0, 0.4 * scale, size=2)
            s = rng.uniform(1.5, 3.0)
            cells.append((cx + ox, cy + oy, s, s, 0.0, strength * rng.uniform(0.3, 0.6)))
    return cells


def _storm_field(cells, spec: GridSpec, shift=(0.0, 0.0)) -> np.ndarray:
    h, w = spec.shape
    g = np.zeros((h, w))
    for cx, cy, sx, sy, ang, peak in cells:
        cx, cy = cx + shift[0], cy + shift[1]
        reach = 4.0 * max(sx, sy)
        x0, x1 = max(0, int(cx - reach)), min(w, int(cx + reach) + 1)
        y0, y1 = max(0, int(cy - reach)), min(h, int(cy + reach) + 1)
        if x0 >= x1 or y0 >= y1:
            continue
        yy, xx = np.mgrid[y0:y1, x0:x1]
        dx, dy = xx - cx, yy - cy
        c, s = math.cos(ang), math.sin(ang)
        u, v = (c * dx + s * dy) / sx, (-s * dx + c * dy) / sy
        g[y0:y1, x0:x1] += peak * np.exp(-0.5 * (u * u + v * v))
    return g


def _field_to_frame(g: np.ndarray, spec: GridSpec, gamma: float, timestamp: int) -> RadarFrame:
    dbz = MAX_DBZ * np.tanh(np.maximum(g, 0.0)) ** gamma
    return RadarFrame(spec, dbz_to_labels(dbz).astype(np.uint8), np.ones(spec.shape, bool), timestamp)


def _channel_responses() -> list:
    """Twelve fixed, strictly increasing maps of [0, 1] onto [0, 1]."""
    funcs = []
    for c in range(MSG_CHANNELS):
        kind, k = c % 3, 0.6 + 0.35 * c
        if kind == 0:
            funcs.append(lambda v, p=0.5 + 0.15 * c: np.power(v, p))
        elif kind == 1:
            funcs.append(lambda v, k=k: np.log1p(k * v) / math.log1p(k))
        else:
            funcs.append(lambda v, k=k: np.expm1(k * v) / math.expm1(k))
    return funcs


_RESPONSES = _channel_responses()
_GAINS = np.array([1.0, -0.8, 1.3, 0.9, -1.1, 0.7, 1.2, -0.9, 1.0, 0.8, -1.2, 1.1])
_OFFSETS = np.linspace(-0.5, 0.6, MSG_CHANNELS)


def msg_from_labels(frame: RadarFrame, sigma: float, rng: np.random.Generator) -> MsgFrame:
    """Satellite channels as ``a_c f_c(dBZ / 58) + b_c`` plus Gaussian noise."""
    v = frame.dbz() / MAX_DBZ
    planes = np.empty((MSG_CHANNELS,) + frame.spec.shape, dtype=np.float64)
    for c, f in enumerate(_RESPONSES):
        planes[c] = _GAINS[c] * f(v) + _OFFSETS[c]
    if sigma > 0:
        planes += rng.normal(0.0, sigma, size=planes.shape)
    return MsgFrame(frame.spec, planes.astype(np.float32), frame.timestamp)


def _station(config: SyntheticSceneConfig, index: int) -> RadarStation:
    if not 0 <= index < len(config.stations):
        raise SceneConfigError(f"station index {index} out of range")
    return config.stations[index]


def spoke_footprint(spec: GridSpec, station: RadarStation, spoke: SpokeSpec) -> np.ndarray:
    """Pixels inside the spoke's wedge, widened to at least one pixel."""
    if not 0 < spoke.width_deg < 360 or spoke.start_km < 0:
        raise SceneConfigError("spoke needs 0 < width_deg < 360 and start_km >= 0")
    if spoke.extent_km > station.range_km or spoke.extent_km <= spoke.start_km:
        raise SceneConfigError(f"spoke extent {spoke.extent_km} km outside (start, station range]")
    yy, xx = np.mgrid[0 : spec.height, 0 : spec.width]
    dx, dy = (xx - station.x) * spec.cell_size, (yy - station.y) * spec.cell_size
    theta = math.radians(spoke.theta_deg)
    along = dx * math.cos(theta) + dy * math.sin(theta)
    across = -dx * math.sin(theta) + dy * math.cos(theta)
    d = np.hypot(dx, dy)
    dphi = np.abs(np.angle(np.exp(1j * (np.arctan2(dy, dx) - theta))))
    radial = (d >= spoke.start_km) & (d <= spoke.extent_km) & (along > 0)
    wedge = dphi <= math.radians(spoke.width_deg) / 2
    line = np.abs(across) <= 0.5 * spec.cell_size
    return radial & (wedge | line)


def ring_points(spec: GridSpec, station: RadarStation, ring: RingSpec, phase: float = 0.0):
    """``(ys, xs)`` of ``point_count`` distinct pixels evenly spaced on the circle."""
    if not 0 < ring.radius_km <= station.range_km:
        raise SceneConfigError(f"ring radius {ring.radius_km} km outside (0, station range]")
    if ring.point_count < 1:
        raise SceneConfigError("ring needs at least one point")
    phi = phase + 2 * math.pi * np.arange(ring.point_count) / ring.point_count
    r = ring.radius_km / spec.cell_size
    xs = np.floor(station.x + r * np.cos(phi) + 0.5).astype(np.intp)
    ys = np.floor(station.y + r * np.sin(phi) + 0.5).astype(np.intp)
    if np.any((xs < 0) | (xs >= spec.width) | (ys < 0) | (ys >= spec.height)):
        raise SceneConfigError("ring leaves the grid")
    if np.unique(ys * spec.width + xs).size != ring.point_count:
        raise SceneConfigError(f"{ring.point_count} points do not fit distinctly on a {ring.radius_km} km ring")
    return ys, xs


def inject_artifacts(clean: RadarFrame, config: SyntheticSceneConfig,
                     rng: np.random.Generator | None = None) -> tuple[RadarFrame, SceneTruth]:
    """Write spokes and rings onto the background of ``clean``.

    Injected labels are drawn uniformly from 3..7. Only background pixels
    are written, so the truth mask is exactly the set of changed pixels.
    """
    if rng is None:
        rng = _streams(config.seed)[1]
    spec = clean.spec
    labels = clean.labels.copy()
    background = (clean.labels == 0) & clean.valid
    lo, hi = ARTIFACT_LABELS
    spokes, rings = [], []
    for s in config.spoke_specs:
        bits = spoke_footprint(spec, _station(config, s.station), s) & background
        labels[bits] = rng.integers(lo, hi + 1, size=int(bits.sum()))
        spokes.append(PixelMask(spec, bits, MaskRole.ARTIFACT))
    for r in config.ring_specs:
        ys, xs = ring_points(spec, _station(config, r.station), r, rng.uniform(0, 2 * math.pi))
        bits = np.zeros(spec.shape, dtype=bool)
        bits[ys, xs] = True
        bits &= background
        labels[bits] = rng.integers(lo, hi + 1, size=int(bits.sum()))
        rings.append(PixelMask(spec, bits, MaskRole.ARTIFACT))
    union = np.zeros(spec.shape, dtype=bool)
    for m in spokes + rings:
        union |= m.bits
    empty = PixelMask.empty(spec, MaskRole.SHADOW)
    truth = SceneTruth(PixelMask(spec, union, MaskRole.ARTIFACT), tuple(spokes), tuple(rings), empty)
    return RadarFrame(spec, labels, clean.valid, clean.timestamp), truth


def apply_shadow(frame: RadarFrame, sectors, stations: RadarStationConfig) -> RadarFrame:
    """Blank the footprints of ``sectors``: label 0 and not valid."""
    sectors = sectors if isinstance(sectors, ShadowSectorSet) else ShadowSectorSet(tuple(sectors))
    if not len(sectors):
        return frame
    for s in sectors:
        if not 0 <= s.station < len(stations):
            raise SceneConfigError(f"sector refers to unknown station {s.station}")
    bits = footprint_mask(sectors, stations, frame.spec).bits
    labels = np.where(bits, 0, frame.labels)
    return RadarFrame(frame.spec, labels, frame.valid & ~bits, frame.timestamp)


def synth_scene(config: SyntheticSceneConfig) -> tuple[RadarFrame, MsgFrame, SceneTruth]:
    """Clean frame, satellite channels and ground truth for ``config``.

    The truth carries one mask per injected spoke and ring, their union,
    and the shadow footprint.
    """
    storm_rng, art_rng, noise_rng = _streams(config.seed)
    cells = _storm_cells(config, storm_rng)
    clean = _field_to_frame(_storm_field(cells, config.spec), config.spec, config.intensity_gamma, config.timestamp)
    msg = msg_from_labels(clean, config.msg_noise_sigma, noise_rng)
    _, truth = inject_artifacts(clean, config, art_rng)
    shadow = footprint_mask(ShadowSectorSet(config.shadow_specs), config.stations, config.spec)
    return clean, msg, replace(truth, shadow=shadow)


def synth_history(config: SyntheticSceneConfig, offsets=(300, 600)) -> list[RadarFrame]:
    """Clean earlier frames, ``offsets`` seconds back, with storms moved back accordingly."""
    storm_rng = _streams(config.seed)[0]
    cells = _storm_cells(config, storm_rng)
    frames = []
    for dt in offsets:
        steps = dt / 300.0
        shift = (-config.velocity[0] * steps, -config.velocity[1] * steps)
        g = _storm_field(cells, config.spec, shift)
        frames.append(_field_to_frame(g, config.spec, config.intensity_gamma, config.timestamp - int(dt)))
    return frames


def make_scene(config: SyntheticSceneConfig, history_offsets=(300, 600)) -> SyntheticScene:
    """Everything for one scene: clean and dirty current frame, channels, truth, history.

    Shadow sectors in the config are applied to the dirty frame and to the
    predecessors.
    """
    clean, msg, truth = synth_scene(config)
    dirty, _ = inject_artifacts(clean, config, _streams(config.seed)[1])
    preds = synth_history(config, history_offsets) if history_offsets else []
    if config.shadow_specs:
        dirty = apply_shadow(dirty, config.shadow_specs, config.stations)
        preds = [apply_shadow(p, config.shadow_specs, config.stations) for p in preds]
    return SyntheticScene(config, clean, dirty, msg, truth, tuple(preds))


def random_artifact_specs(seed: int, config: SyntheticSceneConfig, n_spokes: int = 2, n_rings: int = 1,
                          ring_density: tuple[float, float] = (0.3, 0.5)):
    """Random spokes and rings that fit inside the grid and the station ranges."""
    rng = np.random.default_rng([seed, 0x5EED])
    spec = config.spec
    spokes, rings = [], []
    for _ in range(n_spokes):
        idx = int(rng.integers(len(config.stations)))
        st = config.stations[idx]
        theta = rng.uniform(0, 360)
        # longest radius staying inside the grid along this azimuth
        dx, dy = math.cos(math.radians(theta)), math.sin(math.radians(theta))
        lim = [((spec.width - 1 - st.x) / dx if dx > 0 else -st.x / dx) if abs(dx) > 1e-9 else np.inf,
               ((spec.height - 1 - st.y) / dy if dy > 0 else -st.y / dy) if abs(dy) > 1e-9 else np.inf]
        reach = min(min(lim) * spec.cell_size, st.range_km)
        if reach < 45:
            continue
        extent = rng.uniform(40, reach)
        spokes.append(SpokeSpec(idx, theta, rng.uniform(0.8, 2.5), extent))
    for _ in range(n_rings):
        idx = int(rng.integers(len(config.stations)))
        st = config.stations[idx]
        room = min(st.x, st.y, spec.width - 1 - st.x, spec.height - 1 - st.y) * spec.cell_size - 1
        room = min(room, st.range_km)
        if room < 20:
            continue
        radius = rng.uniform(15, room)
        count = int(rng.uniform(*ring_density) * 2 * math.pi * radius / spec.cell_size)
        rings.append(RingSpec(idx, radius, max(count, 8)))
    return tuple(spokes), tuple(rings)


def _pick(rng, ys, xs, n):
    if ys.size == 0:
        return ys, xs
    idx = rng.choice(ys.size, size=min(n, ys.size), replace=False)
    idx.sort()
    return ys[idx], xs[idx]


def training_sites(scene: SyntheticScene, per_class: int, seed: int = 0) -> list[tuple[int, int, TextureClass]]:
    """Up to ``per_class`` ``(x, y, class)`` sites per class, sampled from one scene.

    Artifact sites are injected pixels; precipitation sites are storm pixels
    at least three pixels away from any artifact.
    """
    rng = np.random.default_rng([int(seed), 0x11B])
    art = scene.truth.artifact.bits
    away = ~ndimage.binary_dilation(art, iterations=3)
    prec = (scene.clean.labels > 0) & away
    sites = []
    for bits, klass in ((art, TextureClass.ARTIFACT), (prec, TextureClass.PRECIPITATION)):
        ys, xs = _pick(rng, *np.nonzero(bits), per_class)
        sites.extend((int(x), int(y), klass) for y, x in zip(ys, xs))
    return sites


def library_scene(seed: int, base: SyntheticSceneConfig = SyntheticSceneConfig()) -> SyntheticScene:
    """A scene with random spokes and rings, as used for library building."""
    cfg = replace(base, seed=int(seed))
    spokes, rings = random_artifact_specs(seed, cfg)
    return make_scene(replace(cfg, spoke_specs=spokes, ring_specs=rings), history_offsets=())


def synthetic_library(seeds, base: SyntheticSceneConfig = SyntheticSceneConfig(), per_class: int = 4,
                      bank_config: GaborBankConfig = GaborBankConfig(), window: int = DEFAULT_WINDOW,
                      eps: float = DEFAULT_EPS) -> TextureLibrary:
    """Texture library from descriptors taken in context on synthetic scenes.

    One scene per seed (see :func:`library_scene`); descriptors are computed
    on the full dirty frame at the sites of :func:`training_sites`.
    """
    bank = build_gabor_bank(bank_config)
    entries = []
    for seed in seeds:
        scene = library_scene(seed, base)
        sites = training_sites(scene, per_class, seed)
        if not sites:
            continue
        stack = compute_feature_stack(scene.dirty, bank)
        xs = np.array([s[0] for s in sites])
        ys = np.array([s[1] for s in sites])
        mats = covariance_at_sites(stack, ys, xs, window, eps)
        for m, (x, y, klass) in zip(mats, sites):
            entries.append(LibraryEntry(CovarianceDescriptor(m, window, (x, y)), klass, len(entries)))
    return TextureLibrary(entries, bank_config, window, eps)


def export_patches(frame: RadarFrame, sites, directory, window: int = DEFAULT_WINDOW, prefix: str = "patch"):
    """Write ``window``-sized crops around ``(x, y, class)`` sites plus ``index.txt``.

    Crops reaching past the grid edge are padded with background.
    """
    out = ensure_dir(directory)
    half = window // 2
    padded = np.pad(frame.labels, half)
    valid = np.pad(frame.valid, half, constant_values=True)
    lines = []
    for i, (x, y, klass) in enumerate(sites):
        crop = padded[y : y + window, x : x + window]
        vcrop = valid[y : y + window, x : x + window]
        name = f"{prefix}_{i:04d}.wxr"
        write_frame(RadarFrame(GridSpec(window, window, frame.spec.cell_size), crop, vcrop, frame.timestamp),
                    Path(out) / name)
        lines.append(f"{name} {TextureClass(klass).value}")
    index = Path(out) / "index.txt"
    existing = index.read_text(encoding="ascii").splitlines() if index.exists() else []
    index.write_text("".join(line + "\n" for line in existing + lines), encoding="ascii")
    return [Path(out) / line.split()[0] for line in lines]


def ring_recovery_rate(frame: RadarFrame, msg: MsgFrame, seed: int = 0, regions: int = 20, size: int = 100,
                       config: CorrectionConfig = CorrectionConfig(k=1)) -> float:
    """Fraction of hidden non-background pixels a ring-trained k-NN gets exactly right."""
    from .metrics import carve_region

    rng = np.random.default_rng([seed, 0xCA1])
    valid = PixelMask(frame.spec, frame.valid, MaskRole.VALID)
    hit = total = 0
    for _ in range(regions):
        mask = carve_region(frame, size, rng)
        for region in connected_components(mask, config.connectivity):
            ring = extract_training_ring(region, mask, valid, frame, msg, config)
            if not ring.usable:
                continue
            pred = knn_predict_many(msg.vectors(region.ys, region.xs), ring, config.k)
            truth = frame.labels[region.ys, region.xs]
            keep = (truth > 0) | (pred > 0)
            hit += int(np.sum(pred[keep] == truth[keep]))
            total += int(keep.sum())
    return hit / total if total else float("nan")


def calibrate_msg_noise(base: SyntheticSceneConfig = SyntheticSceneConfig(), target: float = 0.9,
                        seeds=(0, 1, 2), lo: float = 0.0, hi: float = 1.0, iterations: int = 12) -> float:
    """Noise level at which ring-trained 1-NN recovers about ``target`` of labels exactly."""
    scenes = [synth_scene(replace(base, seed=s, msg_noise_sigma=0.0))[0] for s in seeds]

    def rate(sigma):
        vals = []
        for s, clean in zip(seeds, scenes):
            msg = msg_from_labels(clean, sigma, np.random.default_rng([s, 0xAB]))
            vals.append(ring_recovery_rate(clean, msg, seed=s))
        return float(np.nanmean(vals))

    for _ in range(iterations):
        mid = 0.5 * (lo + hi)
        if rate(mid) > target:
            lo = mid
        else:
            hi = mid
    return 0.5 * (lo + hi)
