import numpy as np
import pytest
import scipy.sparse as sp
from hypothesis import given, settings, strategies as st

from reseed.graph import (GraphError, add_noise_edges, check_labels, connected_components,
                          format_edge_list, from_adjacency, from_edges, generate_sbm, knn_graph,
                          load_edge_list, load_labels, load_matrix_market, mixing_fraction,
                          tfidf)

from _graphs import clique_pair, path, random_connected


def _write(tmp_path, name, text):
    p = tmp_path / name
    p.write_text(text)
    return p


def assert_valid(g):
    a = g.adjacency
    assert (a != a.T).nnz == 0
    assert np.all(a.diagonal() == 0)
    assert np.all(a.data > 0)
    np.testing.assert_array_equal(g.degree, np.asarray(a.sum(axis=1)).ravel())


# -- construction and files -------------------------------------------------

def test_edge_list_path_degrees(tmp_path):
    g = load_edge_list(_write(tmp_path, "g.edges", "0 1 2.0\n1 2 1.0\n"))
    assert g.n_vertices == 3 and g.n_edges == 2
    np.testing.assert_array_equal(g.degree, [2.0, 3.0, 1.0])
    assert_valid(g)


def test_edge_list_comments_and_default_weight(tmp_path):
    g = load_edge_list(_write(tmp_path, "g.edges", "# header\n0 1\n\n1 2\n"))
    assert g.is_unweighted() and g.n_edges == 2


@pytest.mark.parametrize("text,msg", [
    ("0 0 1.0\n", "self-loop"),
    ("0 1 1.0\n1 0 2.0\n", "conflicting duplicate"),
    ("0 1 -1\n", "negative weight"),
    ("0 x\n", "malformed"),
    ("0 1 2 3\n", "expected"),
])
def test_edge_list_errors(tmp_path, text, msg):
    with pytest.raises(GraphError, match=msg):
        load_edge_list(_write(tmp_path, "g.edges", text))


def test_edge_list_consistent_duplicate_accepted(tmp_path):
    g = load_edge_list(_write(tmp_path, "g.edges", "0 1 2.0\n1 0 2.0\n"))
    assert g.n_edges == 1 and g.adjacency[0, 1] == 2.0


def test_edge_list_round_trip(tmp_path):
    rng = np.random.default_rng(3)
    g = random_connected(rng, 30)
    p = _write(tmp_path, "g.edges", format_edge_list(g))
    h = load_edge_list(p)
    assert (g.adjacency != h.adjacency).nnz == 0


def test_matrix_market_pattern(tmp_path):
    text = ("%%MatrixMarket matrix coordinate pattern general\n"
            "2 2 2\n1 2\n2 1\n")
    g, dropped = load_matrix_market(_write(tmp_path, "a.mtx", text))
    assert g.n_edges == 1 and dropped == 0
    assert g.adjacency[0, 1] == 1.0


def test_matrix_market_drops_diagonal(tmp_path):
    text = ("%%MatrixMarket matrix coordinate real symmetric\n"
            "3 3 3\n1 1 5.0\n2 1 1.5\n3 2 2.5\n")
    g, dropped = load_matrix_market(_write(tmp_path, "a.mtx", text))
    assert dropped == 1
    assert g.n_edges == 2 and g.adjacency[0, 0] == 0
    assert g.adjacency[1, 0] == 1.5 and g.adjacency[2, 1] == 2.5


def test_matrix_market_errors(tmp_path):
    rect = ("%%MatrixMarket matrix coordinate real general\n2 3 1\n1 2 1.0\n")
    with pytest.raises(GraphError, match="not square"):
        load_matrix_market(_write(tmp_path, "r.mtx", rect))
    neg = ("%%MatrixMarket matrix coordinate real general\n2 2 2\n1 2 -1.0\n2 1 -1.0\n")
    with pytest.raises(GraphError, match="negative"):
        load_matrix_market(_write(tmp_path, "n.mtx", neg))


def test_labels(tmp_path):
    lab = load_labels(_write(tmp_path, "l.txt", "0\n1\n1\n0\n"))
    np.testing.assert_array_equal(lab, [0, 1, 1, 0])
    with pytest.raises(GraphError, match="contiguous"):
        check_labels([0, 2])
    with pytest.raises(GraphError, match="labels for"):
        check_labels([0, 1], 3)


def test_from_adjacency_rejects_asymmetric():
    with pytest.raises(GraphError):
        from_adjacency(sp.csr_matrix(np.array([[0, 1.0], [2.0, 0]])))


def test_from_edges_errors():
    with pytest.raises(GraphError, match="out of range"):
        from_edges(2, [0], [2])
    with pytest.raises(GraphError, match="zero weight"):
        from_edges(2, [0], [1], [0.0])


# -- components ---------------------------------------------------------------

def test_components_examples():
    assert connected_components(from_edges(4, [0, 2], [1, 3]))[0] == 2
    assert connected_components(path(5))[0] == 1
    assert connected_components(from_edges(3, [], []))[0] == 3


# -- kNN ------------------------------------------------------------------------

def test_knn_orthogonal_rows_error():
    with pytest.raises(GraphError, match="no positive-similarity neighbor"):
        knn_graph(np.eye(3), 1, "cosine_raw")


def test_knn_cosine_raw_example():
    x = np.array([[1.0, 0.0], [1.0, 0.01], [0.0, 1.0]])
    g = knn_graph(x, 1, "cosine_raw", binarize=True)
    # independent oracle: cosines by hand
    cos = x @ x.T / np.outer(np.linalg.norm(x, axis=1), np.linalg.norm(x, axis=1))
    np.fill_diagonal(cos, -np.inf)
    want = {tuple(sorted((i, int(np.argmax(cos[i]))))) for i in range(3)}
    i, j, w = g.edges()
    assert set(zip(i.tolist(), j.tolist())) == want == {(0, 1), (1, 2)}
    assert np.all(w == 1.0)


def test_knn_tfidf_identical_documents():
    # two identical documents plus two others that keep their idf weights nonzero
    counts = np.array([[2, 1, 0, 0], [2, 1, 0, 0], [0, 1, 3, 0], [0, 0, 1, 2]])
    g = knn_graph(counts, 1, "cosine_tfidf")
    assert g.adjacency[0, 1] == pytest.approx(1.0)


def test_tfidf_formula():
    counts = np.array([[1, 2], [0, 1], [3, 0]])
    got = tfidf(counts).toarray()
    df = np.array([2, 2])
    np.testing.assert_allclose(got, counts * np.log(3 / df))


def test_knn_gaussian_sigma():
    x = np.array([[0.0], [1.0], [3.0], [6.0]])
    g = knn_graph(x, 1, "gaussian_euclidean")
    sigma = np.mean([1.0, 1.0, 2.0, 3.0])
    assert g.adjacency[0, 1] == pytest.approx(np.exp(-1 / (2 * sigma ** 2)))
    assert g.adjacency[2, 3] == pytest.approx(np.exp(-9 / (2 * sigma ** 2)))


def test_knn_errors():
    with pytest.raises(GraphError, match="all zero"):
        knn_graph(np.array([[1.0, 0], [0, 0], [1, 1]]), 1, "cosine_raw")
    with pytest.raises(GraphError, match="requires more"):
        knn_graph(np.eye(3), 3, "cosine_raw")


@settings(max_examples=40, deadline=None)
@given(st.integers(4, 25), st.integers(1, 3), st.sampled_from(
    ["cosine_tfidf", "cosine_raw", "gaussian_euclidean"]), st.integers(0, 10_000))
def test_knn_output_is_symmetric(n, k, mode, seed):
    rng = np.random.default_rng(seed)
    x = rng.integers(0, 4, size=(n, 12)) * (rng.random((n, 12)) < 0.5)
    try:
        g = knn_graph(x, k, mode, block_size=int(rng.integers(1, n + 1)))
    except GraphError as exc:
        # sparse random documents can legitimately be degenerate
        assert mode != "gaussian_euclidean"
        assert "positive-similarity" in str(exc) or "all zero" in str(exc)
        return
    assert_valid(g)
    # each vertex keeps at least its own k choices
    assert np.all(np.diff(g.adjacency.indptr) >= 1)


# -- generator ---------------------------------------------------------------

def test_sbm_zero_mixing_has_no_inter_edges():
    g, lab = generate_sbm(50, 2, 8, 0.0, 1)
    assert mixing_fraction(g, lab) == 0.0
    assert_valid(g)


def test_sbm_ten_blocks_of_thousand():
    g, lab = generate_sbm(1000, 10, 16, 0.45, 0)
    assert g.n_vertices == 10_000 and lab.shape == (10_000,)
    np.testing.assert_array_equal(np.bincount(lab), [1000] * 10)
    assert abs(g.degree.mean() - 16) < 0.2


def test_sbm_empirical_mixing():
    g, lab = generate_sbm(500, 10, 16, 0.5, 4)
    assert abs(mixing_fraction(g, lab) - 0.5) <= 0.02


def test_sbm_deterministic():
    a, _ = generate_sbm(100, 4, 10, 0.3, 9)
    b, _ = generate_sbm(100, 4, 10, 0.3, 9)
    assert (a.adjacency != b.adjacency).nnz == 0


@pytest.mark.parametrize("args", [(10, 2, 12, 0.1), (10, 1, 4, 0.2), (10, 2, 4, 1.0)])
def test_sbm_infeasible(args):
    with pytest.raises(GraphError):
        generate_sbm(*args, rng_seed=0)


# -- perturbation -------------------------------------------------------------

def test_noise_zero_fraction_unchanged():
    g, _ = clique_pair(5)
    assert add_noise_edges(g, 0.0, 1) is g


def test_noise_triangle_complement_empty():
    tri = from_edges(3, [0, 1, 0], [1, 2, 2])
    with pytest.raises(GraphError, match="cannot add"):
        add_noise_edges(tri, 0.5, 0)


def test_noise_pendigits_scale_count():
    n, e = 10_992, 149_652
    rng = np.random.default_rng(0)
    i, j = rng.integers(0, n, size=(2, 3 * e))
    key = np.unique(np.minimum(i, j)[i != j] * n + np.maximum(i, j)[i != j])[:e]
    g = from_edges(n, key // n, key % n)
    assert g.n_edges == e
    h = add_noise_edges(g, 1.0, 5)
    assert h.n_edges == 2 * e


@settings(max_examples=60, deadline=None)
@given(st.integers(5, 40), st.floats(0, 2.0), st.integers(0, 10_000))
def test_noise_edges_properties(n, fraction, seed):
    g = random_connected(np.random.default_rng(seed), n, p=0.1, weighted=True)
    count = int(round(fraction * g.n_edges))
    if count > n * (n - 1) // 2 - g.n_edges:
        with pytest.raises(GraphError):
            add_noise_edges(g, fraction, seed)
        return
    h = add_noise_edges(g, fraction, seed)
    assert_valid(h)
    assert h.n_edges == g.n_edges + count
    added = (h.adjacency - g.adjacency.multiply(h.adjacency != 0)).tocoo()
    # original edges keep their weights; new ones have weight 1 and are disjoint
    assert ((h.adjacency.multiply(g.adjacency != 0)) != g.adjacency).nnz == 0
    assert np.all(added.data == 1.0)
    assert add_noise_edges(g, fraction, seed).adjacency.nnz == h.adjacency.nnz


def test_noise_sparse_path_large_graph():
    # large complement exercises the rejection sampler
    g = path(3000)
    h = add_noise_edges(g, 1.0, 2)
    assert h.n_edges == 2 * g.n_edges
    assert_valid(h)


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 30), st.integers(0, 10_000))
def test_degree_recomputation(n, seed):
    g = random_connected(np.random.default_rng(seed), n)
    assert_valid(g)
