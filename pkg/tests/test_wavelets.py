import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from mrn import filterbank as fb
from mrn import wavelets as wv
from mrn.errors import ResolutionError, ShapeError


def _signal(max_i=7):
    return st.integers(0, max_i).flatmap(
        lambda i: st.tuples(st.just(i), arrays(np.float64, 2**i, elements=st.floats(-1e3, 1e3)))
    )


def test_haar_matrix_resolution_one():
    T = wv.haar_matrix(1)
    np.testing.assert_array_equal(T.T, [[0.5, 0.5], [0.5, -0.5]])


def test_haar_matrix_rows_orthogonal_and_inverse():
    for i in range(6):
        T = wv.haar_matrix(i)
        G = T.H.astype(float) @ T.H.T
        assert np.count_nonzero(G - np.diag(np.diag(G))) == 0
        np.testing.assert_allclose(T.T_inv @ T.T, np.eye(2**i), atol=1e-12)


def test_haar_matrix_bounds():
    with pytest.raises(ResolutionError):
        wv.haar_matrix(-1)
    with pytest.raises(ResolutionError):
        wv.haar_matrix(wv.MAX_MATRIX_RESOLUTION + 1)


def test_band_bookkeeping():
    assert [wv.band_of_index(k) for k in range(8)] == [0, 1, 2, 2, 3, 3, 3, 3]
    assert wv.band_slices(3) == [slice(0, 1), slice(1, 2), slice(2, 4), slice(4, 8)]
    assert wv.band_scale(3, 0) == 0.125 and wv.band_scale(3, 1) == 0.125 and wv.band_scale(3, 3) == 0.5


@settings(max_examples=60, deadline=None)
@given(_signal())
def test_fast_cascade_matches_matrix(sig):
    i, v = sig
    np.testing.assert_allclose(wv.pixel_to_haar(v, i), wv.haar_matrix(i).T @ v, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(_signal())
def test_pixel_haar_round_trip(sig):
    i, v = sig
    np.testing.assert_allclose(wv.haar_to_pixel(wv.pixel_to_haar(v, i), i), v, atol=1e-9)


@settings(max_examples=60, deadline=None)
@given(_signal())
def test_first_coefficient_is_mean(sig):
    i, v = sig
    assert wv.pixel_to_haar(v, i)[0] == pytest.approx(v.mean(), abs=1e-9)


def test_2d_round_trip_and_axis_argument():
    rng = np.random.default_rng(0)
    img = rng.standard_normal((3, 8, 8))
    c = wv.pixel_to_haar_2d(img, 3)
    np.testing.assert_allclose(wv.haar_to_pixel_2d(c, 3), img, atol=1e-12)
    np.testing.assert_allclose(c[:, 0, 0], img.mean(axis=(1, 2)), atol=1e-12)
    col = wv.pixel_to_haar(img, 3, axis=1)
    np.testing.assert_allclose(col[:, :, 2], wv.pixel_to_haar(img[:, :, 2], 3), atol=1e-12)


def test_conjugacy_2d():
    rng = np.random.default_rng(1)
    img = rng.standard_normal((16, 16))
    lhs = wv.pixel_to_haar_2d(wv.avg_pool_downsample(img, 4, 2, ndim=2), 2)
    rhs = wv.pixel_to_haar_2d(img, 4)[:4, :4]
    np.testing.assert_allclose(lhs, rhs, atol=1e-12)


def test_pool_upsample():
    v = np.arange(8.0)
    np.testing.assert_array_equal(wv.avg_pool_downsample(v, 3, 1), [1.5, 5.5])
    np.testing.assert_array_equal(wv.duplicate_upsample([1.0, 2.0], 1, 2), [1, 1, 2, 2])
    with pytest.raises(ResolutionError):
        wv.avg_pool_downsample(v, 3, 4)
    with pytest.raises(ShapeError):
        wv.avg_pool_downsample(v, 2, 1)
    with pytest.raises(ShapeError):
        wv.pixel_to_haar(v, 2)


def test_soft_threshold():
    np.testing.assert_array_equal(wv.soft_threshold([-3.0, -0.5, 0.0, 2.0], 1.0), [-2.0, 0.0, 0.0, 1.0])
    np.testing.assert_array_equal(wv.soft_threshold([5.0, -5.0], np.inf), [0.0, 0.0])
    with pytest.raises(ValueError):
        wv.soft_threshold([1.0], -0.1)


# --------------------------------------------------------------------- filter banks


def test_db2_taps_closed_form():
    h = fb.get_filter_bank("db2").lowpass
    assert h.sum() == pytest.approx(math.sqrt(2.0), abs=1e-15)
    assert np.dot(h, h) == pytest.approx(1.0, abs=1e-15)
    # one vanishing moment beyond the constant: sum k g[k] = 0
    g = fb.get_filter_bank("db2").highpass
    assert abs(np.dot(np.arange(4), g)) < 1e-15


@pytest.mark.parametrize("name", ["haar", "db2"])
def test_registered_banks_are_orthogonal(name):
    assert fb.get_filter_bank(name).orthogonality_defect() < 1e-12


def test_register_rejects_non_orthogonal():
    with pytest.raises(ValueError):
        fb.register_filter_bank(fb.FilterBank("bad", np.array([0.5, 0.5])))
    with pytest.raises(KeyError):
        fb.get_filter_bank("nope")


@pytest.mark.parametrize("name", ["haar", "db2"])
@pytest.mark.parametrize("shape,levels", [((32,), 3), ((16, 16), 2), ((8,), 3)])
def test_perfect_reconstruction_and_energy(name, shape, levels):
    x = np.random.default_rng(2).standard_normal(shape)
    pyr = fb.multilevel_dwt(x, levels, name)
    np.testing.assert_allclose(fb.inverse_dwt(pyr), x, atol=1e-12)
    energy = np.sum(pyr.coarse**2)
    for d in pyr.details:
        energy += sum(np.sum(b**2) for b in (d if isinstance(d, tuple) else (d,)))
    assert energy == pytest.approx(np.sum(x**2), rel=1e-12)


@pytest.mark.parametrize("ndim", [1, 2])
def test_haar_coarse_band_is_scaled_average_pool(ndim):
    x = np.random.default_rng(3).standard_normal((16,) * ndim)
    for level in range(1, 4):
        pyr = fb.multilevel_dwt(x, level, "haar")
        pooled = wv.avg_pool_downsample(x, 4, 4 - level, ndim)
        np.testing.assert_allclose(pyr.coarse, pooled * fb.haar_coarse_scale(level, ndim), atol=1e-12)


def test_haar_constant_details_exactly_zero():
    pyr = fb.multilevel_dwt(np.full(16, 2.5), 4, "haar")
    assert all(np.all(d == 0.0) for d in pyr.details)
    rows = pyr.rows()
    assert rows[0][0] == "A4" and len(rows) == 16


def test_dwt_shape_errors():
    with pytest.raises(ShapeError):
        fb.multilevel_dwt(np.zeros(12), 1)
    with pytest.raises(ShapeError):
        fb.multilevel_dwt(np.zeros(8), 4)
    with pytest.raises(ShapeError):
        fb.multilevel_dwt(np.zeros((2, 2, 2)), 1)


def test_pyramid_rows_2d_band_names():
    pyr = fb.multilevel_dwt(np.zeros((4, 4)), 2, "haar")
    names = [r[0] for r in pyr.rows()]
    assert names == ["A2", "LH2", "HL2", "HH2"] + ["LH1"] * 4 + ["HL1"] * 4 + ["HH1"] * 4
    d = pyr.to_dict()
    assert d["levels"] == 2 and set(d["details"][0]) == {"LH", "HL", "HH"}
