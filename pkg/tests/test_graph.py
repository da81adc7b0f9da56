import numpy as np
import pytest
from scipy import sparse

from oracles import knn_brute, pairwise_quad
from strpca.graph import (
    GraphConfig,
    KnnGraph,
    knn,
    laplacian,
    patch_features,
    spatial_graph,
    temporal_graph,
    trace_quad,
    write_matrix_market,
)


def test_knn_matches_brute_force(rng):
    feats = rng.standard_normal((40, 3))
    idx, dist = knn(feats, 5, block=7)
    np.testing.assert_array_equal(idx, knn_brute(feats, 5))
    np.testing.assert_allclose(dist, np.linalg.norm(feats[:, None] - feats[idx], axis=2), atol=1e-10)


def test_knn_ties_go_to_lower_index():
    feats = np.zeros((6, 2))
    idx, dist = knn(feats, 3)
    np.testing.assert_array_equal(idx[0], [1, 2, 3])
    np.testing.assert_array_equal(idx[4], [0, 1, 2])
    assert np.all(dist == 0)


def test_knn_caps_k_at_n_minus_one(rng):
    idx, _ = knn(rng.standard_normal((4, 2)), 10)
    assert idx.shape == (4, 3)


def test_patch_features_match_loops(rng):
    img = rng.standard_normal((5, 6))
    for a in (1, 2, 3, 4):
        feats = patch_features(img, a)
        before = (a - 1) // 2
        padded = np.pad(img, ((before, a // 2), (before, a // 2)), mode="edge")
        for j in range(6):
            for i in range(5):
                np.testing.assert_array_equal(feats[i + 5 * j], padded[i : i + a, j : j + a].ravel())


def test_weights_and_sigma():
    # four collinear points, k=1: each links to its nearest neighbour
    feats = np.array([[0.0], [1.0], [3.0], [6.0]])
    g = temporal_graph(feats.T, GraphConfig(k=1))
    # nearest distances: 1, 1, 2, 3 -> sigma is their mean
    assert g.sigma == pytest.approx(7 / 4)
    a = g.adjacency.toarray()
    assert a[0, 1] == pytest.approx(np.exp(-1 / (2 * g.sigma**2)))
    assert a[2, 3] == pytest.approx(np.exp(-9 / (2 * g.sigma**2)))
    assert a[0, 2] == 0 and a[0, 3] == 0
    np.testing.assert_array_equal(a, a.T)
    assert np.all(np.diag(a) == 0)


def test_fixed_sigma(rng):
    g = temporal_graph(rng.standard_normal((8, 6)), GraphConfig(k=2, sigma_mode="fixed", sigma_value=0.5))
    assert g.sigma == 0.5
    with pytest.raises(ValueError):
        GraphConfig(sigma_mode="fixed")


def test_identical_columns_get_unit_weights():
    x3 = np.ones((5, 4))
    g = temporal_graph(x3, GraphConfig(k=2))
    assert g.sigma == pytest.approx(1e-12)
    assert np.all(g.adjacency.data == 1.0)


def _check_laplacian(lap):
    dense = lap.toarray()
    assert np.array_equal(dense, dense.T)
    ev = np.linalg.eigvalsh(dense)
    assert ev.min() >= -1e-10
    assert ev.max() <= 2 + 1e-10


@pytest.mark.parametrize("seed", range(5))
def test_temporal_laplacian_spectrum(seed):
    x3 = np.random.default_rng(seed).random((30, 150))
    _check_laplacian(laplacian(temporal_graph(x3, GraphConfig(k=10))))


@pytest.mark.parametrize("patch", [1, 3, 8])
def test_spatial_laplacian_spectrum(rng, patch):
    img = rng.random((12, 14))
    _check_laplacian(laplacian(spatial_graph(img, GraphConfig(k=10, patch=patch))))


def test_isolated_vertex_has_zero_row():
    a = sparse.csr_matrix(np.array([[0, 1.0, 0], [1.0, 0, 0], [0, 0, 0]]))
    lap = laplacian(KnnGraph(a, 1.0)).toarray()
    np.testing.assert_allclose(lap, [[1, -1, 0], [-1, 1, 0], [0, 0, 0]], atol=1e-15)


def test_laplacian_annihilates_sqrt_degree(rng):
    g = temporal_graph(rng.random((10, 40)), GraphConfig(k=4))
    lap = laplacian(g)
    np.testing.assert_allclose(lap @ np.sqrt(g.degree()), 0, atol=1e-12)


def test_trace_quad_matches_pairwise_sum(rng):
    g = spatial_graph(rng.random((8, 9)), GraphConfig(k=6, patch=3))
    lap = laplacian(g)
    f = rng.standard_normal((72, 4))
    expect = pairwise_quad(f, g.adjacency.toarray())
    assert abs(trace_quad(f, lap) - expect) < 1e-10 * max(1.0, expect)
    assert abs(trace_quad(f.T, lap, side="right") - expect) < 1e-10 * max(1.0, expect)


def test_trace_quad_combinatorial_laplacian(rng):
    a = rng.random((6, 6))
    a = np.triu(a, 1)
    a = a + a.T
    lap = np.diag(a.sum(1)) - a
    f = rng.standard_normal((6, 2))
    assert trace_quad(f, sparse.csr_matrix(lap)) == pytest.approx(pairwise_quad(f, a, normalized=False), rel=1e-12)


def test_trace_quad_shape_errors(rng):
    lap = sparse.identity(4, format="csr")
    with pytest.raises(ValueError):
        trace_quad(np.zeros((3, 2)), lap)
    with pytest.raises(ValueError):
        trace_quad(np.zeros((4, 2)), lap, side="up")


def test_spatial_graph_argument_errors(rng):
    with pytest.raises(ValueError):
        spatial_graph(rng.random((4, 4)), GraphConfig(patch=8))
    with pytest.raises(ValueError):
        temporal_graph(rng.random((4, 1)), GraphConfig())
    with pytest.raises(ValueError):
        GraphConfig(k=0)


def test_matrix_market_round_trip(tmp_path, rng):
    from scipy.io import mmread

    lap = laplacian(temporal_graph(rng.random((6, 12)), GraphConfig(k=3)))
    write_matrix_market(tmp_path / "l.mtx", lap)
    np.testing.assert_allclose(mmread(str(tmp_path / "l.mtx")).toarray(), lap.toarray(), atol=1e-15)
