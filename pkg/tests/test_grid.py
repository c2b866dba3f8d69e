import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from wxrclean.grid import (
    DEFAULT_STATIONS,
    N_LABELS,
    REFLECTIVITY_DBZ,
    GridSpec,
    MaskRole,
    PixelMask,
    RadarFrame,
    RadarStation,
    RadarStationConfig,
    ReflectivityScale,
    Region,
    check_same_grid,
    dbz_to_label,
    dbz_to_labels,
    label_to_dbz,
    labels_to_dbz,
    union_masks,
)

TABLE = (0, 11.82, 14, 19.46, 22, 26.69, 30, 34.19, 38, 41.82, 46, 50.19, 54.27, 58)


def test_table_matches_published_levels():
    assert REFLECTIVITY_DBZ == TABLE
    assert N_LABELS == 14


@pytest.mark.parametrize("label, dbz", [(0, 0.0), (5, 26.69), (13, 58.0)])
def test_label_to_dbz_examples(label, dbz):
    assert label_to_dbz(label) == dbz


@pytest.mark.parametrize("bad", [-1, 14, 2.5, True])
def test_label_to_dbz_rejects_out_of_range(bad):
    with pytest.raises(ValueError):
        label_to_dbz(bad)


@pytest.mark.parametrize("dbz, label", [(26.69, 5), (12.9, 1), (12.92, 2), (-5.0, 0), (80.0, 13)])
def test_dbz_to_label_nearest(dbz, label):
    assert dbz_to_label(dbz) == label


def test_dbz_to_label_exact_midpoint_goes_low():
    # 12.91 is exactly halfway between 11.82 and 14.0
    assert dbz_to_label(12.91) == 1
    mids = [(a + b) / 2 for a, b in zip(TABLE, TABLE[1:])]
    assert [dbz_to_label(m) for m in mids] == list(range(13))


@pytest.mark.parametrize("bad", [math.nan, math.inf, -math.inf])
def test_dbz_to_label_rejects_non_finite(bad):
    with pytest.raises(ValueError):
        dbz_to_label(bad)


@given(st.floats(-20, 90, allow_nan=False))
def test_dbz_to_label_is_nearest_entry(v):
    label = dbz_to_label(v)
    dist = [abs(v - t) for t in TABLE]
    best = min(dist)
    assert dist[label] == best
    assert label == dist.index(best)


def test_quantization_round_trip():
    for label in range(N_LABELS):
        assert dbz_to_label(label_to_dbz(label)) == label
    labels = np.arange(N_LABELS)
    assert np.array_equal(dbz_to_labels(labels_to_dbz(labels)), labels)


@pytest.mark.parametrize("values", [TABLE[:-1], (1.0,) + TABLE[1:], (0, 14, 11.82) + TABLE[3:]])
def test_scale_invariants(values):
    with pytest.raises(ValueError):
        ReflectivityScale(tuple(values))


def test_gridspec_validation():
    assert GridSpec().shape == (648, 824)
    for kw in ({"width": 0}, {"height": 0}, {"cell_size": 0.0}):
        with pytest.raises(ValueError):
            GridSpec(**kw)


def test_frame_invariants():
    spec = GridSpec(3, 2)
    with pytest.raises(ValueError):
        RadarFrame(spec, np.full((2, 3), 14), np.ones((2, 3), bool))
    with pytest.raises(ValueError):
        RadarFrame(spec, np.ones((3, 2)), np.ones((3, 2), bool))
    labels = np.ones((2, 3))
    valid = np.ones((2, 3), bool)
    valid[0, 0] = False
    with pytest.raises(ValueError, match="invalid pixels"):
        RadarFrame(spec, labels, valid)


def test_frame_arrays_are_read_only_copies():
    labels = np.zeros((2, 3), np.uint8)
    frame = RadarFrame.from_labels(labels)
    labels[0, 0] = 5
    assert frame.labels[0, 0] == 0
    with pytest.raises(ValueError):
        frame.labels[0, 0] = 1


def test_frame_dbz_maps_labels():
    frame = RadarFrame.from_labels(np.array([[0, 5, 13]]))
    assert frame.dbz().tolist() == [[0.0, 26.69, 58.0]]
    assert frame.precipitation.tolist() == [[False, True, True]]


def test_mask_algebra():
    spec = GridSpec(4, 4)
    a = PixelMask(spec, np.eye(4, dtype=bool))
    b = PixelMask(spec, np.fliplr(np.eye(4, dtype=bool)))
    assert a.union(b).count == 8
    assert a.intersection(b).count == 0
    assert union_masks([a, b], MaskRole.CORRECTION).role == MaskRole.CORRECTION
    with pytest.raises(ValueError):
        a.union(PixelMask.empty(GridSpec(4, 5)))
    with pytest.raises(ValueError):
        check_same_grid(a, PixelMask.empty(GridSpec(5, 4)))


def test_station_geometry():
    spec = GridSpec(5, 5)
    st = RadarStation(2, 2)
    d = st.distance_grid(spec)
    az = st.azimuth_grid(spec)
    assert d[2, 4] == 2.0 and az[2, 4] == 0.0
    assert az[4, 2] == pytest.approx(math.pi / 2)  # +y is a quarter turn
    with pytest.raises(ValueError):
        RadarStation(0, 0, range_km=0)
    with pytest.raises(ValueError):
        RadarStationConfig(())
    assert len(DEFAULT_STATIONS) == 4
    assert RadarStationConfig.from_dict(DEFAULT_STATIONS.to_dict()) == DEFAULT_STATIONS


def test_region_fields():
    r = Region(1, [3, 3, 4], [1, 2, 2])
    assert r.size == 3
    assert r.bbox == (1, 3, 2, 4)
    assert r.pixels == {(1, 3), (2, 3), (2, 4)}
    with pytest.raises(ValueError):
        Region(1, [], [])
