import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from scipy import ndimage

from wxrclean.grid import GridSpec, RadarFrame, RadarStation, RadarStationConfig
from wxrclean.synth import SpokeSpec, SyntheticSceneConfig, make_scene
from wxrclean.texture import (
    CovarianceDescriptor,
    FeatureStack,
    GaborBankConfig,
    LibraryEntry,
    NumericError,
    TextureClass,
    TextureLibrary,
    anchor_lower_bounds,
    build_gabor_bank,
    classify_descriptors,
    compute_feature_stack,
    covariance_at_sites,
    covariance_distance,
    loocv,
    nearest_entries,
    nn_classify,
    region_covariance,
    segment_texture,
)

from .conftest import random_frame

ART, PREC = TextureClass.ARTIFACT, TextureClass.PRECIPITATION


def random_spd(rng, dim, spread=1.0):
    a = rng.normal(size=(dim, dim)) * spread
    return a @ a.T + 0.1 * np.eye(dim)


def naive_convolve(image, kernel):
    """Direct zero-padded 'same' convolution, one output pixel at a time."""
    h, w = image.shape
    kh, kw = kernel.shape
    oy, ox = kh // 2, kw // 2
    out = np.zeros((h, w))
    for y in range(h):
        for x in range(w):
            acc = 0.0
            for i in range(kh):
                for j in range(kw):
                    sy, sx = y + oy - i, x + ox - j
                    if 0 <= sy < h and 0 <= sx < w:
                        acc += image[sy, sx] * kernel[i, j]
            out[y, x] = acc
    return out


def make_library(mats, classes):
    entries = [LibraryEntry(CovarianceDescriptor(m), c, i) for i, (m, c) in enumerate(zip(mats, classes))]
    return TextureLibrary(entries)


# Gabor bank


def test_default_bank_has_18_kernels():
    bank = build_gabor_bank()
    assert len(bank) == 18
    assert GaborBankConfig().n_kernels == 18
    assert all(k.shape == (21, 21) for k in bank)


def test_kernels_have_zero_dc():
    image = np.full((64, 64), 7.5)
    for k in build_gabor_bank():
        assert abs(k.sum()) < 1e-12
        resp = ndimage.convolve(image, k, mode="constant")
        assert np.abs(resp[10:-10, 10:-10]).max() < 1e-9


@pytest.mark.parametrize("index", [0, 1, 2])
def test_matching_orientation_beats_orthogonal(index):
    cfg = GaborBankConfig()
    bank = build_gabor_bank(cfg)
    freq = cfg.frequencies[index]
    yy, xx = np.mgrid[0:96, 0:96]
    for k in range(cfg.orientations):
        theta = k * math.pi / cfg.orientations
        orth = (k + cfg.orientations // 2) % cfg.orientations
        grating = np.cos(2 * math.pi * freq * (xx * math.cos(theta) + yy * math.sin(theta)))
        own = np.abs(ndimage.convolve(grating, bank[index * 6 + k])[20:-20, 20:-20]).max()
        other = np.abs(ndimage.convolve(grating, bank[index * 6 + orth])[20:-20, 20:-20]).max()
        assert own > other


def test_bank_config_validation():
    for kw in ({"orientations": 0}, {"frequencies": ()}, {"frequencies": (0.6,)}, {"kernel_size": 20}):
        with pytest.raises(ValueError):
            GaborBankConfig(**kw)


# feature stack


def test_zero_frame_gives_zero_stack():
    frame = RadarFrame.empty(GridSpec(30, 30))
    assert not compute_feature_stack(frame).planes.any()


def test_impulse_response_is_kernel_magnitude():
    labels = np.zeros((41, 41), np.uint8)
    labels[20, 20] = 5
    stack = compute_feature_stack(RadarFrame.from_labels(labels))
    bank = build_gabor_bank()
    for plane, k in zip(stack.planes, bank):
        np.testing.assert_allclose(plane[10:31, 10:31], 26.69 * np.abs(k), atol=1e-9)


@pytest.mark.parametrize("size", [16, 32])
def test_stack_matches_naive_convolution(size):
    rng = np.random.default_rng(size)
    frame = random_frame(rng, (size, size))
    cfg = GaborBankConfig(kernel_size=9 if size == 32 else 21)
    bank = build_gabor_bank(cfg)
    stack = compute_feature_stack(frame, bank)
    image = frame.dbz()
    for plane, k in zip(stack.planes, bank):
        assert np.abs(plane - np.abs(naive_convolve(image, k))).max() < 1e-9


def test_invalid_pixels_contribute_nothing():
    labels = np.full((25, 25), 4, np.uint8)
    valid = np.ones((25, 25), bool)
    valid[5:9, 5:9] = False
    labels[~valid] = 0
    a = compute_feature_stack(RadarFrame.from_labels(labels, valid))
    b = compute_feature_stack(RadarFrame.from_labels(labels))
    np.testing.assert_allclose(a.planes, b.planes, atol=1e-12)


# covariance descriptors


def test_constant_stack_gives_eps_identity():
    stack = FeatureStack(GridSpec(9, 9), np.full((18, 9, 9), 3.25))
    d = region_covariance(stack, (4, 4), 5)
    assert np.array_equal(d.matrix, 1e-6 * np.eye(18))


def test_hand_computed_two_plane_covariance():
    a = np.array([[1, 2, 3], [4, 5, 6], [7, 8, 10]], float)
    b = np.array([[2, 0, 1], [0, 3, 0], [1, 0, 2]], float)
    stack = FeatureStack(GridSpec(3, 3), np.stack([a, b]))
    # by hand: sum a = 46, sum a^2 = 304, sum b = 9, sum b^2 = 19, sum ab = 47
    va = (304 - 46 * 46 / 9) / 8
    vb = (19 - 9 * 9 / 9) / 8
    cab = (47 - 46 * 9 / 9) / 8
    d = region_covariance(stack, (1, 1), 3, eps=0.0)
    np.testing.assert_allclose(d.matrix, [[va, cab], [cab, vb]], atol=1e-12)
    np.testing.assert_allclose(d.matrix, np.cov(np.stack([a.ravel(), b.ravel()])), atol=1e-12)


def test_window_validation():
    stack = FeatureStack(GridSpec(9, 9), np.zeros((2, 9, 9)))
    with pytest.raises(ValueError):
        region_covariance(stack, (4, 4), 4)
    with pytest.raises(ValueError):
        region_covariance(stack, (4, 4), 11)


def test_border_window_is_clipped():
    rng = np.random.default_rng(3)
    planes = rng.random((3, 12, 12))
    stack = FeatureStack(GridSpec(12, 12), planes)
    d = region_covariance(stack, (0, 0), 5, eps=0.0)
    np.testing.assert_allclose(d.matrix, np.cov(planes[:, :3, :3].reshape(3, -1)), atol=1e-12)


def test_sites_match_single_descriptors():
    rng = np.random.default_rng(5)
    frame = random_frame(rng, (48, 48), 0.6)
    stack = compute_feature_stack(frame)
    ys, xs = rng.integers(0, 48, size=(2, 30))
    batch = covariance_at_sites(stack, ys, xs, 15)
    for m, y, x in zip(batch, ys, xs):
        ref = region_covariance(stack, (x, y), 15).matrix
        np.testing.assert_allclose(m, ref, rtol=1e-8, atol=1e-6 * np.abs(ref).max())


@given(st.integers(0, 2**31 - 1))
def test_descriptors_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    stack = FeatureStack(GridSpec(11, 11), rng.exponential(size=(18, 11, 11)))
    m = region_covariance(stack, tuple(rng.integers(0, 11, 2)), 7).matrix
    assert np.abs(m - m.T).max() <= 1e-9
    assert np.linalg.eigvalsh(m).min() >= -1e-9


@given(st.integers(0, 2**31 - 1), st.floats(-50, 50))
def test_descriptor_shift_invariance(seed, shift):
    rng = np.random.default_rng(seed)
    planes = rng.exponential(size=(4, 9, 9))
    a = region_covariance(FeatureStack(GridSpec(9, 9), planes), (4, 4), 7, eps=0.0).matrix
    b = region_covariance(FeatureStack(GridSpec(9, 9), planes + shift), (4, 4), 7, eps=0.0).matrix
    np.testing.assert_allclose(a, b, atol=1e-9 * max(1.0, abs(shift)) ** 2)


# metric


def test_distance_examples():
    rng = np.random.default_rng(0)
    a = random_spd(rng, 18)
    assert covariance_distance(a, a) < 1e-9
    assert covariance_distance([[4.0]], [[1.0]]) == pytest.approx(math.log(4), abs=1e-12)
    with pytest.raises(ValueError):
        covariance_distance(np.eye(2), np.eye(3))
    with pytest.raises(NumericError):
        covariance_distance(np.eye(2), np.zeros((2, 2)))


@given(st.integers(0, 2**31 - 1))
def test_metric_axioms(seed):
    rng = np.random.default_rng(seed)
    a, b, c = (random_spd(rng, 6, rng.uniform(0.2, 3)) for _ in range(3))
    ab, ba = covariance_distance(a, b), covariance_distance(b, a)
    assert ab >= 0
    assert abs(ab - ba) <= 1e-9
    assert covariance_distance(a, c) <= ab + covariance_distance(b, c) + 1e-6


# classification


def test_nn_classify_examples():
    rng = np.random.default_rng(1)
    d = random_spd(rng, 4)
    assert nn_classify(d, make_library([d], [ART])) == ART
    e = random_spd(rng, 4)
    assert nn_classify(e, make_library([d, e], [ART, PREC])) == PREC
    with pytest.raises(RuntimeError):
        nn_classify(d, TextureLibrary([]))


def test_nn_classify_tie_goes_to_lowest_source_id():
    d = np.eye(3)
    entries = [LibraryEntry(CovarianceDescriptor(d), PREC, 7), LibraryEntry(CovarianceDescriptor(d), ART, 3)]
    assert nn_classify(d, TextureLibrary(entries)) == ART


def brute_nearest(queries, mats):
    return np.array([np.argmin([covariance_distance(q, m) for m in mats]) for q in queries])


def test_nn_classify_matches_exhaustive_scan():
    rng = np.random.default_rng(2)
    mats = [random_spd(rng, 5, rng.uniform(0.3, 2)) for _ in range(20)]
    classes = [ART if i % 3 == 0 else PREC for i in range(20)]
    lib = make_library(mats, classes)
    queries = [random_spd(rng, 5, rng.uniform(0.3, 2)) for _ in range(40)]
    idx = brute_nearest(queries, mats)
    assert [nn_classify(q, lib) for q in queries] == [classes[i] for i in idx]


@pytest.mark.parametrize("seed", range(5))
def test_pruned_search_matches_brute_force(seed):
    rng = np.random.default_rng(seed)
    dim = 6
    centres = [random_spd(rng, dim) for _ in range(4)]
    mats = [c + 0.3 * random_spd(rng, dim, 0.3) for c in centres for _ in range(8)]
    lib = make_library(mats, [ART if i % 2 else PREC for i in range(len(mats))])
    queries = np.stack([centres[i % 4] + 0.3 * random_spd(rng, dim, 0.3) for i in range(60)])
    ref = brute_nearest(queries, mats)
    assert np.array_equal(nearest_entries(queries, lib), ref)
    # anchor bounds from neighbouring sites must not change the answer
    ys, xs = np.divmod(np.arange(60), 8)
    lower = anchor_lower_bounds(queries, ys, xs, lib, block=4, min_sites=2)
    assert not np.isnan(lower).all()
    assert np.array_equal(nearest_entries(queries, lib, lower=lower), ref)
    assert np.array_equal(classify_descriptors(queries, lib, lower), lib.is_artifact[ref])


def test_loocv_examples():
    d = np.eye(3)
    assert loocv(make_library([d, d], [ART, ART])) == 1.0
    assert loocv(make_library([d, d], [ART, PREC])) == 0.0
    with pytest.raises(ValueError):
        loocv(make_library([d], [ART]))


def test_loocv_separable_clusters():
    rng = np.random.default_rng(4)
    mats, classes = [], []
    for i in range(40):
        q, _ = np.linalg.qr(rng.normal(size=(5, 5)))
        centre = np.zeros(5) if i % 2 == 0 else np.full(5, 3.0)
        loglam = centre + rng.normal(0, 0.2, 5)
        mats.append(q @ np.diag(np.exp(loglam)) @ q.T)
        classes.append(ART if i % 2 else PREC)
    lib = make_library(mats, classes)
    # oracle: every entry's nearest other entry, by exhaustive scan, is in its class
    for i, m in enumerate(mats):
        d = [covariance_distance(m, o) if j != i else np.inf for j, o in enumerate(mats)]
        assert classes[int(np.argmin(d))] == classes[i]
    assert loocv(lib) == 1.0


def test_library_persistence(tmp_path):
    rng = np.random.default_rng(6)
    lib = make_library([random_spd(rng, 18) for _ in range(4)], [ART, PREC, ART, PREC])
    lib.save(tmp_path / "lib.cov")
    back = TextureLibrary.load(tmp_path / "lib.cov")
    assert len(back) == 4
    assert np.array_equal(back.matrices, lib.matrices)
    assert np.array_equal(back.is_artifact, lib.is_artifact)
    assert back.bank_config == lib.bank_config


def test_library_from_patches():
    rng = np.random.default_rng(7)
    patches = [(random_frame(rng, (39, 39)), "artifact"), (random_frame(rng, (39, 39)), "precipitation")]
    lib = TextureLibrary.from_patches(patches)
    assert len(lib) == 2 and lib.has_both_classes()
    assert lib.matrices.shape == (2, 18, 18)


def test_duplicate_source_ids_rejected():
    e = LibraryEntry(CovarianceDescriptor(np.eye(2)), ART, 0)
    with pytest.raises(ValueError):
        TextureLibrary([e, e])


# segmentation


def spoke_only_frame():
    stations = RadarStationConfig((RadarStation(128.0, 128.0),))
    cfg = SyntheticSceneConfig(seed=3, blob_count=0, stations=stations,
                               spoke_specs=(SpokeSpec(0, 30.0, 1.5, 110.0),))
    scene = make_scene(cfg, history_offsets=())
    return scene.dirty, scene.truth.artifact.bits


def test_zero_frame_has_no_candidates(library):
    assert segment_texture(RadarFrame.empty(GridSpec(64, 64)), library).count == 0


def test_spoke_only_frame_is_flagged(library):
    frame, truth = spoke_only_frame()
    mask = segment_texture(frame, library).bits
    assert (mask & truth).sum() >= 0.9 * truth.sum()


def storm_scene(seed):
    from wxrclean.synth import library_scene

    return library_scene(seed)


def test_stride_changes_only_near_class_boundaries(library):
    scene = storm_scene(21)
    frame = scene.dirty
    fine = segment_texture(frame, library, stride=1).bits
    coarse = segment_texture(frame, library, stride=4).bits
    prec = frame.precipitation
    diff = fine ^ coarse
    assert not np.any(diff & ~prec)
    if diff.any():
        # distance from each disagreement to the nearest pixel of the other class
        to_art = ndimage.distance_transform_edt(~(fine & prec))
        to_rest = ndimage.distance_transform_edt(~(~fine & prec))
        d = np.where(fine, to_rest, to_art)[diff]
        assert d.max() <= 4 * math.sqrt(2)


def test_segmentation_never_flags_background(library):
    scene = storm_scene(22)
    mask = segment_texture(scene.dirty, library).bits
    assert not np.any(mask & (scene.dirty.labels == 0))


def test_segmentation_deterministic(library):
    frame = storm_scene(23).dirty
    a = segment_texture(frame, library)
    b = segment_texture(frame, library)
    assert a.equals(b)


def test_stride_validation(library):
    with pytest.raises(ValueError):
        segment_texture(RadarFrame.empty(GridSpec(8, 8)), library, stride=0)
    with pytest.raises(RuntimeError):
        segment_texture(RadarFrame.from_labels(np.ones((45, 45))), TextureLibrary([]))
