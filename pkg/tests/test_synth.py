import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wxrclean.geometry import ShadowSector, sector_footprint
from wxrclean.grid import RadarStationConfig
from wxrclean.synth import (
    RingSpec,
    SceneConfigError,
    SpokeSpec,
    SyntheticSceneConfig,
    apply_shadow,
    inject_artifacts,
    make_scene,
    random_artifact_specs,
    spoke_footprint,
    synth_scene,
)

BASE = SyntheticSceneConfig()
STATION = BASE.stations[0]


def test_no_blobs_gives_empty_frame():
    clean, _, truth = synth_scene(SyntheticSceneConfig(blob_count=0))
    assert not clean.labels.any() and truth.artifact.count == 0


def test_same_seed_is_bit_identical():
    cfg = SyntheticSceneConfig(seed=5, spoke_specs=(SpokeSpec(0, 30.0, 2.0, 100.0),),
                               ring_specs=(RingSpec(0, 80.0, 100),),
                               shadow_specs=(ShadowSector(0, 1.0, 1.3, 10.0, 120.0),))
    a, b = make_scene(cfg), make_scene(cfg)
    assert a.clean.equals(b.clean) and a.dirty.equals(b.dirty)
    assert np.array_equal(a.msg.channels, b.msg.channels)
    assert a.truth.artifact.equals(b.truth.artifact) and a.truth.shadow.equals(b.truth.shadow)
    assert all(p.equals(q) for p, q in zip(a.predecessors, b.predecessors))


def test_noiseless_channels_invert_to_labels():
    clean, msg, _ = synth_scene(SyntheticSceneConfig(seed=8, msg_noise_sigma=0.0, blob_count=12))
    vectors = msg.channels.reshape(12, -1).T
    labels = clean.labels.ravel()
    seen = {}
    for v, lab in zip(map(bytes, vectors), labels):
        assert seen.setdefault(v, lab) == lab
    assert len(set(seen.values())) == len(np.unique(labels)) > 5


def test_noise_does_not_move_storms():
    a, _, _ = synth_scene(SyntheticSceneConfig(seed=3, msg_noise_sigma=0.0))
    b, _, _ = synth_scene(SyntheticSceneConfig(seed=3, msg_noise_sigma=0.2,
                                               spoke_specs=(SpokeSpec(0, 10.0, 2.0, 90.0),)))
    assert a.equals(b)


def test_no_specs_means_no_artifacts():
    clean, _, _ = synth_scene(BASE)
    dirty, truth = inject_artifacts(clean, BASE)
    assert dirty.equals(clean) and truth.artifact.count == 0


def test_spoke_truth_is_footprint_minus_precipitation():
    spec = SpokeSpec(0, 45.0, 3.0, 110.0)
    cfg = SyntheticSceneConfig(seed=4, spoke_specs=(spec,))
    clean, _, truth = synth_scene(cfg)
    fp = spoke_footprint(cfg.spec, STATION, spec)
    assert truth.artifact.count == (fp & ~clean.precipitation).sum()
    dirty, _ = inject_artifacts(clean, cfg)
    changed = dirty.labels != clean.labels
    assert np.array_equal(changed, truth.artifact.bits)
    assert set(np.unique(dirty.labels[changed])) <= set(range(3, 8))


def test_ring_of_forty_points():
    cfg = SyntheticSceneConfig(seed=6, blob_count=0, ring_specs=(RingSpec(0, 100.0, 40),))
    _, _, truth = synth_scene(cfg)
    assert truth.artifact.count == 40 and truth.rings[0].count == 40


@pytest.mark.parametrize("kw", [
    {"spoke_specs": (SpokeSpec(0, 0.0, 2.0, 500.0),)},
    {"spoke_specs": (SpokeSpec(3, 0.0, 2.0, 50.0),)},
    {"ring_specs": (RingSpec(0, 300.0, 10),)},
    {"ring_specs": (RingSpec(0, 2.0, 400),)},
])
def test_out_of_range_geometry_rejected(kw):
    with pytest.raises(SceneConfigError):
        synth_scene(SyntheticSceneConfig(**kw))


@given(st.integers(0, 2**31 - 1))
def test_injection_only_touches_background(seed):
    base = SyntheticSceneConfig(seed=seed % 1000)
    spokes, rings = random_artifact_specs(seed, base)
    cfg = SyntheticSceneConfig(seed=seed % 1000, spoke_specs=spokes, ring_specs=rings)
    clean, _, truth = synth_scene(cfg)
    dirty, _ = inject_artifacts(clean, cfg)
    prec = clean.precipitation
    assert np.array_equal(dirty.labels[prec], clean.labels[prec])
    assert not np.any(truth.artifact.bits & prec)


def test_predecessors_are_translated_storms():
    cfg = SyntheticSceneConfig(seed=9, velocity=(3.0, 0.0))
    s = make_scene(cfg)
    assert [s.clean.timestamp - p.timestamp for p in s.predecessors] == [300, 600]
    # a 3 px per step eastward drift: the past field sits 3 px further west
    a = s.clean.labels[:, 40:200].astype(int)
    b = s.predecessors[0].labels[:, 37:197].astype(int)
    assert np.mean(np.abs(a - b) <= 1) > 0.99


# shadows


def test_empty_shadow_is_identity():
    clean, _, _ = synth_scene(BASE)
    assert apply_shadow(clean, [], BASE.stations) is clean


def test_full_circle_shadow_blanks_station_disk():
    clean, _, _ = synth_scene(SyntheticSceneConfig(seed=2, blob_count=15))
    s = ShadowSector(0, 0.0, 2 * math.pi, 0.0, STATION.range_km)
    out = apply_shadow(clean, [s], BASE.stations)
    disk = STATION.distance_grid(BASE.spec) <= STATION.range_km
    assert not out.labels[disk].any() and not out.valid[disk].any()
    assert np.array_equal(out.labels[~disk], clean.labels[~disk])


def test_twenty_degree_sector_area():
    s = ShadowSector(0, math.radians(100), math.radians(120), 10.0, 120.0)
    cfg = SyntheticSceneConfig(seed=1, shadow_specs=(s,))
    scene = make_scene(cfg, history_offsets=())
    zeroed = (~scene.dirty.valid).sum()
    area = (s.r_end**2 - s.r_start**2) / 2 * s.width
    perimeter = 2 * (s.r_end - s.r_start) + (s.r_end + s.r_start) * s.width
    assert abs(zeroed - area) <= perimeter / 2
    assert scene.truth.shadow.count == zeroed


def test_shadow_on_unknown_station_rejected():
    clean, _, _ = synth_scene(BASE)
    with pytest.raises(SceneConfigError):
        apply_shadow(clean, [ShadowSector(2, 0.0, 1.0, 0.0, 10.0)], BASE.stations)


def test_sector_footprint_half_open_in_azimuth():
    a = ShadowSector(0, 0.0, math.pi, 0.0, 100.0)
    b = ShadowSector(0, math.pi, 2 * math.pi, 0.0, 100.0)
    fa = sector_footprint(a, STATION, BASE.spec)
    fb = sector_footprint(b, STATION, BASE.spec)
    assert not np.any(fa & fb)
    disk = STATION.distance_grid(BASE.spec) <= 100.0
    assert np.array_equal(fa | fb, disk)


def test_config_validation():
    with pytest.raises(ValueError):
        SyntheticSceneConfig(blob_count=-1)
    with pytest.raises(ValueError):
        SyntheticSceneConfig(msg_noise_sigma=-0.1)
    assert isinstance(BASE.stations, RadarStationConfig)
