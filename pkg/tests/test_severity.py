import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from xaiseg import grid
from xaiseg import severity as S
from xaiseg.postproc import dilate

seeds = st.integers(0, 2**31 - 1)


def random_mask(seed, size=32):
    rng = np.random.default_rng(seed)
    return rng.random((size, size)) < rng.uniform(0.05, 0.7)


def partition(labels):
    return sorted(sorted(zip(*np.nonzero(labels == k))) for k in range(1, labels.max() + 1))


# ---------------------------------------------------------------------------
# labeling


def test_component_examples():
    m = np.zeros((6, 6), dtype=bool)
    m[0:2, 0:2] = m[4:6, 4:6] = True
    assert S.connected_components(m)[1] == 2
    d = np.zeros((3, 3), dtype=bool)
    d[0, 0] = d[1, 1] = True
    assert S.connected_components(d)[1] == 1
    assert S.connected_components(np.zeros((4, 4), dtype=bool))[1] == 0


@settings(max_examples=50)
@given(seeds)
def test_labels_match_union_find(seed):
    m = random_mask(seed)
    labels, n = S.connected_components(m)
    comps = oracles.components(m)
    assert n == len(comps)
    assert partition(labels) == sorted(sorted(c) for c in comps)
    # ids follow raster order of each component's first pixel
    firsts = [np.argmax((labels == k).ravel()) for k in range(1, n + 1)]
    assert firsts == sorted(firsts)


# ---------------------------------------------------------------------------
# distances (two independent routes plus a brute-force oracle)


def test_distance_examples():
    m = np.zeros((5, 5), dtype=bool)
    m[1:4, 1:4] = True
    d = S.distance_transform(m)
    assert d[2, 2] == 2 and d[1, 1] == 1 and d[0, 0] == 0
    one = np.zeros((3, 3), dtype=bool)
    one[1, 1] = True
    assert S.distance_transform(one)[1, 1] == 1


@settings(max_examples=50)
@given(seeds)
def test_distance_transform_matches_brute_force(seed):
    m = random_mask(seed)
    assert np.array_equal(S.distance_transform(m), oracles.edt(m))


@settings(max_examples=50)
@given(seeds, st.integers(1, 20), st.integers(1, 20))
def test_envelope_and_min_plus_routes_agree(seed, h, w):
    sites = np.random.default_rng(seed).random((h, w)) < 0.1
    a, b = grid.sq_distance_to(sites), grid.sq_distance_to_fast(sites)
    assert np.array_equal(a, b)
    if sites.any():
        ys, xs = np.nonzero(sites)
        yy, xx = np.mgrid[:h, :w]
        brute = ((yy[..., None] - ys) ** 2 + (xx[..., None] - xs) ** 2).min(axis=-1)
        assert np.array_equal(a, brute)
    else:
        assert np.all(np.isinf(a))


def test_distances_are_at_least_one_on_foreground():
    m = random_mask(7)
    d = S.distance_transform(m)
    assert np.all(d[m] >= 1) and not d[~m].any()


# ---------------------------------------------------------------------------
# skeleton


def test_skeleton_examples():
    one = np.zeros((5, 5), dtype=bool)
    one[2, 2] = True
    assert np.array_equal(S.skeletonize(one), one)
    line = np.zeros((7, 9), dtype=bool)
    line[3, 1:8] = True
    assert np.array_equal(S.skeletonize(line), line)
    diag = np.eye(8, dtype=bool)
    assert np.array_equal(S.skeletonize(diag), diag)
    bar = np.zeros((8, 14), dtype=bool)
    bar[2:6, 2:12] = True
    sk = S.skeletonize(bar)
    assert sk.any() and np.all(sk <= bar) and S.connected_components(sk)[1] == 1
    assert not (sk[:-1, :-1] & sk[1:, :-1] & sk[:-1, 1:] & sk[1:, 1:]).any()


def test_skeleton_keeps_a_disc():
    yy, xx = np.mgrid[:15, :15]
    disc = (yy - 7) ** 2 + (xx - 7) ** 2 <= 16
    sk = S.skeletonize(disc)
    assert sk[7, 7] and S.connected_components(sk)[1] == 1


@settings(max_examples=30)
@given(seeds)
def test_skeleton_is_a_subset_with_the_same_components(seed):
    m = oracles.random_blob(np.random.default_rng(seed), 32)
    sk = S.skeletonize(m)
    assert np.all(sk <= m)
    assert S.connected_components(sk)[1] == S.connected_components(m)[1]


# ---------------------------------------------------------------------------
# width


def test_width_examples():
    line = np.zeros((9, 9), dtype=bool)
    line[4, 1:8] = True
    assert S.max_width(line)[0] == 1
    bar = np.zeros((12, 20), dtype=bool)
    bar[4:7, 2:18] = True
    assert S.max_width(bar)[0] == 3
    sq = np.zeros((14, 14), dtype=bool)
    sq[2:12, 2:12] = True
    assert abs(S.max_width(sq)[0] - oracles.inscribed_disc_diameter(sq)) <= 1
    assert oracles.inscribed_disc_diameter(sq) == 10
    assert S.max_width(np.zeros((4, 4), dtype=bool)) == (0.0, 0.0)


def test_calibration_arithmetic():
    assert round(11.86 * S.CALIBRATION_MM_PER_PX, 2) == 5.10
    bar = np.zeros((12, 20), dtype=bool)
    bar[4:7, 2:18] = True
    px, mm = S.max_width(bar, 0.5)
    assert mm == px * 0.5


@settings(max_examples=50)
@given(seeds)
def test_width_within_one_pixel_of_inscribed_disc(seed):
    m = oracles.random_blob(np.random.default_rng(seed), 32)
    assert abs(S.max_width(m)[0] - oracles.inscribed_disc_diameter(m)) <= 1


@settings(max_examples=30)
@given(seeds, st.integers(1, 3))
def test_dilation_is_monotone_for_every_metric(seed, r):
    m = oracles.random_blob(np.random.default_rng(seed), 32)
    a, b = S.severity_report(m), S.severity_report(dilate(m, r))
    assert b.area_px >= a.area_px and b.max_width_px >= a.max_width_px and b.cpp <= a.cpp


@settings(max_examples=30)
@given(seeds, st.integers(1, 3))
def test_rotation_equivariance(seed, k):
    m = oracles.random_blob(np.random.default_rng(seed), 32)
    assert S.severity_report(np.rot90(m, k)) == S.severity_report(m)


@settings(max_examples=30)
@given(seeds, st.integers(0, 8), st.integers(0, 8))
def test_translation_invariance(seed, dy, dx):
    m = oracles.random_blob(np.random.default_rng(seed), 24)
    a = np.zeros((40, 40), dtype=bool)
    b = np.zeros((40, 40), dtype=bool)
    a[4:28, 4:28] = m
    b[4 + dy : 28 + dy, 4 + dx : 28 + dx] = m
    ra, rb = S.severity_report(a), S.severity_report(b)
    assert (ra.cpp, ra.area_px, ra.max_width_px) == (rb.cpp, rb.area_px, rb.max_width_px)


# ---------------------------------------------------------------------------
# reports


def test_report_examples():
    r = S.severity_report(np.zeros((8, 8), dtype=bool))
    assert (r.cpp, r.area_px, r.max_width_px) == (0, 0, 0.0)
    two = np.zeros((16, 16), dtype=bool)
    two[1, 1] = two[12, 13] = True
    r = S.severity_report(two)
    assert (r.cpp, r.area_px, r.max_width_px) == (2, 2, 1.0)
    big = np.zeros((256, 256), dtype=bool)
    big.flat[:655] = True
    assert S.severity_report(big).area_fraction == pytest.approx(0.01, abs=1e-4)


def test_report_invariants():
    m = oracles.random_blob(np.random.default_rng(5), 32)
    r = S.severity_report(m, 0.3)
    assert r.area_fraction == r.area_px / m.size
    assert r.max_width_mm == r.max_width_px * 0.3 and r.calibration_mm_per_px == 0.3


def test_write_reports(tmp_path):
    m = np.zeros((10, 10), dtype=bool)
    m[3:6, 1:9] = True
    est = S.severity_report(m)
    truth = S.severity_report(dilate(m, 1))
    path = tmp_path / "r.csv"
    S.write_reports(path, [("a", est)], {"a": truth})
    rows = list(csv.DictReader(path.open()))
    assert list(rows[0])[:6] == list(S.REPORT_FIELDS)
    assert int(rows[0]["cpp"]) == 1 and float(rows[0]["width_px"]) == 3
    assert float(rows[0]["area_px_abs_err"]) == abs(est.area_px - truth.area_px)
