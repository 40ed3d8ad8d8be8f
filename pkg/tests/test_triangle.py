import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from mrn import triangle as tri
from mrn.errors import ResolutionError, ShapeError
from mrn.spaces import MultiResFunction, project


def _area(v):
    (ax, ay), (bx, by), (cx, cy) = v
    return abs((bx - ax) * (cy - ay) - (cx - ax) * (by - ay)) / 2


def test_address_index_round_trip():
    for d in range(4):
        for k in range(4**d):
            assert tri.address_index(tri.index_address(k, d)) == k
    assert tri.address_index("21") == 4
    with pytest.raises(ValueError):
        tri.address_index("15")


def test_layout_depth_one_and_bounds():
    assert tri.codespace_layout(1) == [["1", "2"], ["3", "4"]]
    assert tri.codespace_layout(0) == [[""]]
    with pytest.raises(ResolutionError):
        tri.codespace_layout(tri.MAX_LAYOUT_DEPTH + 1)


def test_encode_places_addresses_like_the_layout():
    d = 3
    vals = np.arange(4.0**d)
    grid = tri.encode(vals, d)
    layout = tri.codespace_layout(d)
    for r in range(2**d):
        for c in range(2**d):
            assert grid[r, c] == tri.address_index(layout[r][c])


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 5), st.integers(0, 2**31 - 1))
def test_encode_decode_round_trip(d, seed):
    vals = np.random.default_rng(seed).standard_normal((2, 4**d))
    np.testing.assert_array_equal(tri.decode(tri.encode(vals, d), d), vals)


def test_encode_shape_errors():
    with pytest.raises(ShapeError):
        tri.encode(np.zeros(15), 2)
    with pytest.raises(ShapeError):
        tri.decode(np.zeros((4, 2)), 2)


def test_cells_have_equal_area_and_nest():
    for d in range(4):
        V = tri.cell_vertices(d)
        areas = np.array([_area(v) for v in V])
        np.testing.assert_allclose(areas, 0.5 / 4**d, rtol=1e-12)
    parents, kids = tri.cell_vertices(1), tri.cell_vertices(2)
    for p in range(4):
        A = parents[p]
        # every vertex of every child is a convex combination of the parent's vertices
        M = np.vstack([A.T, np.ones(3)])
        for child in kids[4 * p : 4 * p + 4]:
            lam = np.linalg.solve(M, np.vstack([child.T, np.ones(3)]))
            assert np.all(lam > -1e-12)


def test_depth_one_centroids():
    c = tri.centroids(1)
    np.testing.assert_allclose(c[0], [1 / 6, 1 / 6])
    np.testing.assert_allclose(c[3], [1 / 3, 1 / 3])
    assert c.sum() == pytest.approx(8 / 3)


def test_pool_is_mean_of_children():
    f = MultiResFunction("triangle", 1, np.array([1.0, 2.0, 3.0, 6.0]))
    assert tri.tri_avg_pool(f, 0).coeffs.tolist() == [3.0]
    np.testing.assert_array_equal(project(f, 0).coeffs, [3.0])
    with pytest.raises(ResolutionError):
        tri.tri_avg_pool(f, 2)


def test_haar_depth_one_values():
    c = tri.tri_haar(MultiResFunction("triangle", 1, np.array([1.0, 2.0, 3.0, 6.0])))
    np.testing.assert_array_equal(c[0], [3.0, -1.5, -1.0, 0.5])


def test_haar_matrix_rows_orthogonal_and_band_variance():
    for d in range(1, 4):
        T = tri.tri_haar_matrix(d)
        G = T @ T.T
        np.testing.assert_allclose(G, np.diag(np.diag(G)), atol=1e-15)
        # coefficient variance under unit white noise is the squared row norm
        for k in range(4**d):
            assert G[k, k] == pytest.approx(tri.tri_band_variance(d, tri.tri_detail_level(k)), rel=1e-14)


def test_detail_level():
    assert [tri.tri_detail_level(k) for k in (0, 1, 3, 4, 15, 16)] == [0, 1, 1, 2, 2, 3]


def test_plane_pools_to_centroid_value():
    # a linear function's cell average equals its value at the centroid
    f = tri.tri_synth("plane", 4)
    for d in range(4):
        c = tri.centroids(d)
        np.testing.assert_allclose(tri.tri_avg_pool(f, d).coeffs, c[:, 0] + 2 * c[:, 1], atol=1e-13)


def test_synth_kinds():
    assert np.all(tri.tri_synth("constant", 2).coeffs == 1.0)
    b = tri.tri_synth("bump", 3)
    assert b.coeffs.max() <= 1.0 and b.coeffs.min() > 0.0
    with pytest.raises(ValueError):
        tri.tri_synth("ring", 2)


def test_haar_requires_depth():
    with pytest.raises(ResolutionError):
        tri.tri_haar_array(np.ones(1), 0)
