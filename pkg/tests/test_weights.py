from __future__ import annotations

import struct

import numpy as np
import pytest
from scipy import sparse

import radpipe.weights as weights_mod
from helpers import make_cal, random_calibration

from radpipe.calib import geometry_digest, mask_digest
from radpipe.geometry import pixel_q, q_grid
from radpipe.weights import (
    CACHE_MAGIC,
    CACHE_VERSION,
    WeightMatrixError,
    area_vector,
    build_weight_matrix,
    cached_build,
    load_cache,
    reference_build_dense,
    save_cache,
)


def _no_mask(cal):
    return np.zeros(cal.geometry.image_size, dtype=bool)


# -- agreement with the brute-force dense reference --------------------------------


def test_matches_dense_reference_on_random_calibrations(rng):
    for _ in range(10):
        cal, mask = random_calibration(rng, max_size=24)
        dense, edges_ref = reference_build_dense(cal, mask)
        w = build_weight_matrix(cal, mask)
        assert w.matrix.shape == dense.shape
        # absolute slack covers the reference's plain-arccos rounding at
        # small angles; any indexing bug shifts edges by a whole step
        assert np.allclose(w.q_edges, edges_ref, rtol=1e-9, atol=1e-8)
        # weight quantum is 1/s^2 >= 1/9, so this tolerance separates
        # genuine bin-assignment differences from summation dust
        assert np.allclose(w.matrix.toarray(), dense, atol=1e-12, rtol=0.0)


def test_matches_dense_reference_tilted_oversampled():
    cal = make_cal(
        geometry_overrides={
            "beamcenter": (7.37, 9.81),
            "image_size": (16, 18),
            "tilt_angle": 11.0,
            "tilt_rotation": 205.0,
        },
        oversampling=3,
        pixels_per_radial_element=1.7,
    )
    mask = np.zeros((16, 18), dtype=bool)
    mask[3:5, :] = True
    dense, edges_ref = reference_build_dense(cal, mask)
    w = build_weight_matrix(cal, mask)
    assert np.allclose(w.q_edges, edges_ref, rtol=1e-9, atol=1e-8)
    assert np.allclose(w.matrix.toarray(), dense, atol=1e-12, rtol=0.0)


def test_reference_build_rejects_large_images():
    cal = make_cal(geometry_overrides={"image_size": (65, 8), "beamcenter": (32.0, 4.0)})
    with pytest.raises(WeightMatrixError):
        reference_build_dense(cal, np.zeros((65, 8), dtype=bool))


# -- structural properties ----------------------------------------------------------


def test_matrix_shape_and_grid_sizes():
    cal = make_cal()
    w = build_weight_matrix(cal, _no_mask(cal))
    n_v, n_h = cal.geometry.image_size
    assert w.n_pixels == n_v * n_h
    assert w.q_edges.shape == (w.n_bins + 1,)
    assert w.q_centers.shape == (w.n_bins,)
    assert sparse.issparse(w.matrix)
    assert w.matrix.dtype == np.float64


def test_area_equals_row_sums(rng):
    cal, mask = random_calibration(rng, max_size=16)
    w = build_weight_matrix(cal, mask)
    rows = np.asarray(w.matrix.sum(axis=1)).ravel()
    assert np.array_equal(w.area, rows)
    assert np.array_equal(area_vector(w), rows)


@pytest.mark.parametrize("s", [1, 2, 3])
def test_untilted_unmasked_pixels_carry_unit_weight(s):
    # untilted sensor: every subpixel q is below the outermost edge, so
    # each unmasked pixel distributes exactly its full weight
    cal = make_cal(
        geometry_overrides={"beamcenter": (15.62, 16.41)},
        oversampling=s,
        pixels_per_radial_element=1.3,
    )
    mask = np.zeros(cal.geometry.image_size, dtype=bool)
    mask[::7, ::5] = True
    w = build_weight_matrix(cal, mask)
    cols = np.asarray(w.matrix.sum(axis=0)).ravel()
    flat = mask.ravel()
    assert np.allclose(cols[~flat], 1.0, atol=1e-12)
    assert np.all(cols[flat] == 0.0)


def test_weights_are_exact_subpixel_multiples(rng):
    cal, mask = random_calibration(rng, max_size=16, oversampling=3)
    w = build_weight_matrix(cal, mask)
    scaled = w.matrix.data * 9.0
    assert np.array_equal(scaled, np.rint(scaled))
    assert np.all(w.matrix.data > 0.0)
    assert np.all(w.matrix.data <= 1.0)


def test_oversampling_one_assigns_whole_pixels():
    cal = make_cal(geometry_overrides={"beamcenter": (15.62, 16.41)})
    w = build_weight_matrix(cal, _no_mask(cal))
    assert np.all(w.matrix.data == 1.0)
    # each pixel appears in exactly one bin
    counts = np.asarray((w.matrix != 0).sum(axis=0)).ravel()
    assert np.all(counts == 1)


def test_oversampling_splits_border_pixels():
    base = make_cal(geometry_overrides={"beamcenter": (15.62, 16.41)})
    cal2 = make_cal(
        geometry_overrides={"beamcenter": (15.62, 16.41)}, oversampling=2
    )
    w1 = build_weight_matrix(base, _no_mask(base))
    w2 = build_weight_matrix(cal2, _no_mask(cal2))
    split = np.asarray((w2.matrix != 0).sum(axis=0)).ravel()
    assert np.any(split > 1)
    assert np.all(w1.matrix.data == 1.0)
    fractional = w2.matrix.data[w2.matrix.data < 1.0]
    assert fractional.size > 0
    assert np.array_equal(fractional * 4.0, np.rint(fractional * 4.0))


def test_doubling_radial_element_roughly_halves_bins():
    cal1 = make_cal(pixels_per_radial_element=1.0)
    cal2 = make_cal(pixels_per_radial_element=2.0)
    w1 = build_weight_matrix(cal1, _no_mask(cal1))
    w2 = build_weight_matrix(cal2, _no_mask(cal2))
    assert abs(w2.n_bins - w1.n_bins / 2.0) <= 1.0


def test_mask_shape_mismatch_rejected():
    cal = make_cal()
    with pytest.raises(WeightMatrixError):
        build_weight_matrix(cal, np.zeros((8, 8), dtype=bool))


def test_subpixels_beyond_last_edge_are_dropped():
    # the outermost edge maps the corner radius through the
    # distortion-free direction; only at wide angles (detector close to
    # the sample) can tilt push rim subpixels past it
    cal = make_cal(
        geometry_overrides={
            "beamcenter": (15.62, 16.41),
            "detector_distance": 8.0,
            "tilt_angle": 30.0,
            "tilt_rotation": 0.0,
        },
        oversampling=2,
    )
    mask = _no_mask(cal)
    w = build_weight_matrix(cal, mask)
    cols = np.asarray(w.matrix.sum(axis=0)).ravel()
    edges, _ = q_grid(cal)
    n_v, n_h = cal.geometry.image_size
    vv, hh = np.meshgrid(np.arange(n_v, dtype=float), np.arange(n_h, dtype=float), indexing="ij")
    overflow = np.zeros((n_v, n_h), dtype=bool)
    for dv in (-0.25, 0.25):
        for dh in (-0.25, 0.25):
            q = pixel_q(cal.geometry, cal.wavelength, vv + dv, hh + dh)
            overflow |= q >= edges[-1]
    overflow = overflow.ravel()
    assert overflow.any()
    assert np.all(cols[overflow] < 1.0)
    assert np.allclose(cols[~overflow], 1.0, atol=1e-12)


def test_rows_iterator_matches_csr_slices():
    cal = make_cal(oversampling=2)
    w = build_weight_matrix(cal, _no_mask(cal))
    m = w.matrix
    for j, (idx, vals) in enumerate(w.rows()):
        lo, hi = m.indptr[j], m.indptr[j + 1]
        assert np.array_equal(idx, m.indices[lo:hi])
        assert np.array_equal(vals, m.data[lo:hi])
    assert j == w.n_bins - 1


# -- disk cache ---------------------------------------------------------------------


def _csr_equal(a: sparse.csr_matrix, b: sparse.csr_matrix) -> bool:
    return (
        a.shape == b.shape
        and np.array_equal(a.indptr, b.indptr)
        and np.array_equal(a.indices, b.indices)
        and np.array_equal(a.data, b.data)
    )


def test_cache_round_trip(tmp_path, rng):
    cal, mask = random_calibration(rng, max_size=16)
    w = build_weight_matrix(cal, mask)
    path = tmp_path / "w.rpw"
    save_cache(w, path)
    back = load_cache(path)
    assert _csr_equal(back.matrix, w.matrix)
    assert np.array_equal(back.area, w.area)
    assert np.array_equal(back.q_edges, w.q_edges)
    assert np.allclose(back.q_centers, w.q_centers, rtol=0.0, atol=1e-15)
    assert back.image_size == w.image_size
    assert back.oversampling == w.oversampling
    assert back.geometry_digest == w.geometry_digest
    assert back.mask_digest == w.mask_digest


def test_load_rejects_foreign_and_truncated_files(tmp_path):
    junk = tmp_path / "junk.rpw"
    junk.write_bytes(b"not a cache file at all")
    with pytest.raises(WeightMatrixError):
        load_cache(junk)
    short = tmp_path / "short.rpw"
    short.write_bytes(b"RP")
    with pytest.raises(WeightMatrixError):
        load_cache(short)


def test_load_rejects_unknown_version(tmp_path):
    cal = make_cal()
    w = build_weight_matrix(cal, _no_mask(cal))
    path = tmp_path / "w.rpw"
    save_cache(w, path)
    raw = bytearray(path.read_bytes())
    raw[4:8] = struct.pack("<I", CACHE_VERSION + 1)
    path.write_bytes(bytes(raw))
    with pytest.raises(WeightMatrixError):
        load_cache(path)


def test_cache_file_starts_with_magic(tmp_path):
    cal = make_cal()
    w = build_weight_matrix(cal, _no_mask(cal))
    path = tmp_path / "w.rpw"
    save_cache(w, path)
    assert path.read_bytes()[:4] == CACHE_MAGIC


def test_cached_build_reuses_file(tmp_path, monkeypatch):
    cal = make_cal()
    mask = _no_mask(cal)
    first = cached_build(cal, mask, tmp_path)
    files = list(tmp_path.glob("wm_*.rpw"))
    assert len(files) == 1
    # a second call must be served from disk, never rebuilt
    def explode(*a, **k):
        raise AssertionError("matrix was rebuilt despite a valid cache")
    monkeypatch.setattr(weights_mod, "build_weight_matrix", explode)
    again = cached_build(cal, mask, tmp_path)
    assert _csr_equal(again.matrix, first.matrix)


def test_cached_build_recovers_from_corrupt_file(tmp_path):
    cal = make_cal()
    mask = _no_mask(cal)
    first = cached_build(cal, mask, tmp_path)
    path = next(tmp_path.glob("wm_*.rpw"))
    path.write_bytes(b"garbage")
    again = cached_build(cal, mask, tmp_path)
    assert _csr_equal(again.matrix, first.matrix)
    assert load_cache(path) is not None


def test_cached_build_keys_on_mask(tmp_path):
    cal = make_cal()
    mask_a = _no_mask(cal)
    mask_b = _no_mask(cal)
    mask_b[5, 5] = True
    cached_build(cal, mask_a, tmp_path)
    cached_build(cal, mask_b, tmp_path)
    assert len(list(tmp_path.glob("wm_*.rpw"))) == 2


def test_cached_build_without_cache_dir(tmp_path):
    cal = make_cal()
    mask = _no_mask(cal)
    w = cached_build(cal, mask, None)
    assert w.n_bins > 0
    assert list(tmp_path.iterdir()) == []


def test_digests_recorded_on_build():
    cal = make_cal()
    mask = _no_mask(cal)
    w = build_weight_matrix(cal, mask)
    assert w.geometry_digest == geometry_digest(cal)
    assert w.mask_digest == mask_digest(mask)
