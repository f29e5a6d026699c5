import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from barkknots.errors import DomainError, ExtractionError
from barkknots.extract import (
    EllipseDetection,
    KnotTrack,
    TrackEntry,
    detect_knot_blobs,
    extract_bark_contour,
    fit_ellipse_to_bbox,
    median_filter_3x3,
    pith_shift,
    process_stack,
    recenter_to_pith,
    recovered_instances,
    shift_image,
    smooth_track_sizes,
    track_knots,
)
from barkknots.raster import EXTENT, Ellipse, annotate_slices, render_cross_section, render_stack
from barkknots.synthesis import sample_log_spec, surface_radius


def disk(size=256, radius=100.0, cy=None, cx=None, value=0.4):
    c = (size - 1) / 2.0
    cy = c if cy is None else cy
    cx = c if cx is None else cx
    rows, cols = np.indices((size, size))
    return np.where(np.hypot(rows - cy, cols - cx) <= radius, value, 0.0)


def det(z, cx, cy, a=3.0, b=3.0, score=0.9):
    box = (cx - a, cy - b, cx + a, cy + b)
    return EllipseDetection(z, box, Ellipse(cx, cy, a, b), score)


# recentring ------------------------------------------------------------------------------


def test_centered_disk_is_unchanged():
    img = disk()
    assert pith_shift(img) == (0, 0)
    assert np.array_equal(recenter_to_pith(img), img)


def test_shifted_disk_is_recentred():
    img = disk(cy=127.5 - 3, cx=127.5 + 5)
    out = recenter_to_pith(img)
    rows, cols = np.nonzero(out > 0)
    assert math.hypot(rows.mean() - 127.5, cols.mean() - 127.5) <= 1.0


def test_blank_image_raises():
    with pytest.raises(ExtractionError):
        recenter_to_pith(np.zeros((32, 32)))


def test_shift_zero_pads():
    img = np.arange(16.0).reshape(4, 4)
    out = shift_image(img, 1, -2)
    assert np.all(out[0] == 0) and np.all(out[:, 2:] == 0)
    assert np.array_equal(out[1:, :2], img[:3, 2:])


# median filter ---------------------------------------------------------------------------


def brute_median(img):
    h, w = img.shape
    p = np.pad(img, 1, mode="edge")
    out = np.empty_like(img)
    for i in range(h):
        for j in range(w):
            out[i, j] = sorted(p[i : i + 3, j : j + 3].ravel())[4]
    return out


def test_median_constant_and_impulse():
    img = np.full((9, 9), 0.4)
    assert np.array_equal(median_filter_3x3(img), img)
    img[4, 4] = 1.0
    assert np.array_equal(median_filter_3x3(img), np.full((9, 9), 0.4))


def test_median_matches_brute_force():
    img = np.random.default_rng(3).random((16, 16))
    assert np.array_equal(median_filter_3x3(img), brute_median(img))


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(3, 9), st.integers(3, 9)), elements=st.floats(0, 1)))
def test_median_property(img):
    assert np.array_equal(median_filter_3x3(img), brute_median(img))


def test_median_rejects_tiny_images():
    with pytest.raises(DomainError):
        median_filter_3x3(np.zeros((2, 5)))


# bark contour ------------------------------------------------------------------------------


def test_disk_contour():
    c = extract_bark_contour(disk(radius=100.0), 360)
    assert len(c) == 360
    assert np.all(np.abs(c - 100.0) <= 0.5)


def test_contour_needs_rays():
    with pytest.raises(DomainError):
        extract_bark_contour(disk(), 4)


def test_contour_of_blank_image_raises():
    with pytest.raises(ExtractionError):
        extract_bark_contour(np.zeros((16, 16)), 16, threshold=0.1)


def test_missing_rays_are_interpolated():
    img = disk(size=64, radius=20.0)
    # blank a thin wedge along +x so one ray never crosses
    img[31:33, 28:] = 0.0
    c = extract_bark_contour(img, 8, threshold=0.2)
    assert np.all(np.isfinite(c))
    assert c[0] == pytest.approx(0.5 * (c[1] + c[7]))


def test_contour_matches_analytic_surface():
    spec = sample_log_spec(21, 3)
    size, z = 256, 1.3
    img = median_filter_3x3(render_cross_section(spec, z, size).image)
    c = extract_bark_contour(img, 360)
    ang = np.arange(360) * 2 * math.pi / 360
    truth = surface_radius(spec, ang, z) * size / (2 * EXTENT)
    assert np.mean(np.abs(c - truth)) < 2.0


@pytest.mark.parametrize("k", [1, 2, 3])
def test_contour_rotation_invariance(k):
    spec = sample_log_spec(8, 4)
    img = render_cross_section(spec, 1.0, 128).image
    c0 = extract_bark_contour(img, 360)
    # rot90 turns image content by -90 degrees in (x right, y down) coordinates
    ck = extract_bark_contour(np.rot90(img, k), 360)
    np.testing.assert_allclose(np.roll(c0, -90 * k), ck, atol=1e-9)


# blobs ------------------------------------------------------------------------------------


def test_fit_ellipse_to_bbox():
    e = fit_ellipse_to_bbox((10, 20, 30, 60))
    assert (e.cx, e.cy, e.a, e.b) == (20, 40, 10, 20)
    sq = fit_ellipse_to_bbox((0, 0, 4, 4))
    assert sq.a == sq.b
    with pytest.raises(DomainError):
        fit_ellipse_to_bbox((0, 0, 0, 5))


def test_no_blobs_in_plain_disk():
    assert detect_knot_blobs(disk()) == []


def test_single_blob():
    img = disk()
    img[np.hypot(*np.indices(img.shape) - np.array([100, 140])[:, None, None]) <= 5] = 0.9
    out = detect_knot_blobs(img)
    assert len(out) == 1
    d = out[0]
    assert d.center == pytest.approx((140, 100), abs=0.5)
    assert d.score == pytest.approx(0.9)
    x0, y0, x1, y1 = d.box
    assert d.ellipse.a == pytest.approx((x1 - x0) / 2) and d.ellipse.b == pytest.approx((y1 - y0) / 2)


def test_small_blobs_are_dropped():
    img = disk()
    img[100, 100] = 0.9
    assert detect_knot_blobs(img, min_area=4) == []


def test_three_knots_detected_at_annotations():
    spec = sample_log_spec(77, 3)
    size, nz = 256, 64
    anns = annotate_slices(spec, size, nz)
    stack = render_stack(spec, size, nz)
    checked = 0
    for a in anns:
        if len(a.ellipses) != 3:
            continue
        dets = detect_knot_blobs(median_filter_3x3(stack[a.z_index]))
        assert len(dets) == 3
        for e in a.ellipses:
            assert min(math.hypot(d.center[0] - e.cx, d.center[1] - e.cy) for d in dets) < 2.0
        checked += 1
    assert checked > 0


# tracking ---------------------------------------------------------------------------------


def test_single_detection_in_every_slice():
    tracks = track_knots([[det(z, 50, 50)] for z in range(10)])
    assert len(tracks) == 1
    assert tracks[0].z_indices == list(range(10))


def test_far_apart_detections_make_two_tracks():
    tracks = track_knots([[det(z, 50, 50), det(z, 250, 50)] for z in range(6)], max_jump_px=20)
    assert len(tracks) == 2
    assert all(len(t) == 6 for t in tracks)


def test_gap_is_bridged_with_interpolation():
    per = [[det(z, 50 + z, 50)] for z in range(7)]
    per[3] = []
    tracks = track_knots(per, max_gap=2)
    assert len(tracks) == 1
    t = tracks[0]
    assert t.z_indices == list(range(7))
    assert [e.interpolated for e in t.entries] == [False] * 3 + [True] + [False] * 3
    assert t.entries[3].detection.center == pytest.approx((53, 50))


def test_long_gap_splits_track():
    per = [[det(z, 50, 50)] for z in range(10)]
    for z in (3, 4, 5, 6):
        per[z] = []
    assert len(track_knots(per, max_gap=3)) == 2


@settings(max_examples=40, deadline=None)
@given(st.lists(st.lists(st.tuples(st.floats(0, 200), st.floats(0, 200)), max_size=4), min_size=1, max_size=12), st.integers(0, 3))
def test_tracking_partitions_detections(points, gap):
    per = [[det(z, x, y) for x, y in pts] for z, pts in enumerate(points)]
    tracks = track_knots(per, max_gap=gap, max_jump_px=15)
    seen = [id(e.detection) for t in tracks for e in t.entries if not e.interpolated]
    assert len(seen) == len(set(seen))
    assert sorted(seen) == sorted(id(d) for ds in per for d in ds)
    for t in tracks:
        z = t.z_indices
        assert all(b > a for a, b in zip(z, z[1:]))


def _track(sizes):
    return KnotTrack([TrackEntry(z, det(z, 40.0, 40.0, s, s)) for z, s in enumerate(sizes)])


def test_size_outlier_removed():
    areas = [4, 4, 400, 4, 4]
    sides = [math.sqrt(a) / 2 for a in areas]
    sm = smooth_track_sizes(_track(sides), 5)
    assert [4 * e.detection.ellipse.a * e.detection.ellipse.b for e in sm.entries] == pytest.approx([4] * 5)
    assert all(e.detection.center == (40.0, 40.0) for e in sm.entries)


def test_constant_sizes_unchanged():
    t = _track([3.0] * 6)
    sm = smooth_track_sizes(t, 3)
    assert [e.detection for e in sm.entries] == [e.detection for e in t.entries]


def brute_sliding_median(x, w):
    h = w // 2
    p = [x[0]] * h + list(x) + [x[-1]] * h
    return [sorted(p[i : i + w])[h] for i in range(len(x))]


@settings(max_examples=40, deadline=None)
@given(st.lists(st.floats(0.5, 50), min_size=1, max_size=20), st.sampled_from([3, 5, 7]))
def test_smoothing_matches_sliding_median(sizes, w):
    sm = smooth_track_sizes(_track(sizes), w)
    assert [e.detection.ellipse.a for e in sm.entries] == pytest.approx(brute_sliding_median(sizes, w), abs=0)


@pytest.mark.parametrize("w", [1, 2, 4])
def test_window_must_be_odd(w):
    with pytest.raises(DomainError):
        smooth_track_sizes(_track([1.0, 2.0]), w)


# end to end -------------------------------------------------------------------------------


def test_stack_pipeline_recovers_knots():
    spec = sample_log_spec(500, 4)
    size, nz = 256, 32
    res = process_stack(render_stack(spec, size, nz))
    assert res.contours.shape == (nz, 360)
    hit, total = recovered_instances(res.tracks, annotate_slices(spec, size, nz))
    assert total > 0
    assert hit / total >= 0.95
