import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from isgraph import graph


def _rand_instance(rng, n_t, n_s, ties):
    if ties:
        return rng.integers(0, 5, size=(n_t, n_s)).astype(np.float64)
    return rng.random((n_t, n_s))


@settings(max_examples=60, deadline=None)
@given(st.integers(1, 30), st.integers(1, 30), st.integers(1, 12), st.booleans(), st.integers(0, 2**31 - 1))
def test_knn_select_matches_exhaustive_sort(n_t, n_s, k, ties, seed):
    rng = np.random.default_rng(seed)
    dist = _rand_instance(rng, n_t, n_s, ties)
    eligible = rng.random((n_t, n_s)) < 0.8
    got = graph.knn_select(dist, k, eligible)
    assert got.neighbors.shape == (n_t, k)
    assert got.rows() == oracles.knn(dist, k, eligible)
    # padding and distances are consistent with the selection
    for i, row in enumerate(got.rows()):
        assert np.array_equal(got.distances[i, : len(row)], dist[i, row])
        assert np.all(np.isinf(got.distances[i, len(row) :]))


def test_knn_select_rejects_zero_k():
    with pytest.raises(ValueError):
        graph.knn_select(np.zeros((2, 2)), 0)


@settings(max_examples=50, deadline=None)
@given(st.integers(1, 8), st.integers(1, 10), st.integers(0, 2**31 - 1))
def test_distances_match_brute_force_exactly(t, p, seed):
    rng = np.random.default_rng(seed)
    a = rng.normal(scale=20, size=(t, 2))
    b = rng.normal(scale=20, size=(t, 2))
    pts = rng.normal(scale=20, size=(p, 2))
    assert graph.dsg_distance(a, b) == oracles.dsg_distance(a, b)
    assert graph.ssg_distance(a, pts) == oracles.ssg_distance(a, pts)


def test_distance_matrices_agree_with_scalar_oracles():
    rng = np.random.default_rng(3)
    props = rng.normal(scale=15, size=(9, 6, 2))
    polys = rng.normal(scale=15, size=(5, 7, 2))
    dm = graph.dsg_distance_matrix(props)
    sm = graph.ssg_distance_matrix(props, polys)
    for i in range(9):
        for j in range(9):
            assert dm[i, j] == oracles.dsg_distance(props[i], props[j])
        for j in range(5):
            assert sm[i, j] == oracles.ssg_distance(props[i], polys[j])


def test_distance_matrix_symmetric_zero_diagonal():
    props = np.random.default_rng(0).normal(size=(7, 4, 2))
    dm = graph.dsg_distance_matrix(props)
    assert np.array_equal(dm, dm.T)
    assert np.all(np.diag(dm) == 0)


def test_dsg_excludes_same_agent_nodes():
    rng = np.random.default_rng(1)
    node_agent = np.repeat(np.arange(4), 3)
    props = rng.normal(size=(12, 5, 2))
    e = graph.build_dsg_edges(props, node_agent, k=20)
    for t, row in enumerate(e.rows()):
        assert len(row) == 9
        assert all(node_agent[s] != node_agent[t] for s in row)
    e2 = graph.build_dsg_edges(props, node_agent, k=20, exclude_same_agent=False)
    assert all(len(r) == 11 and t not in r for t, r in enumerate(e2.rows()))


def test_distance_kinds_use_the_named_quantity():
    rng = np.random.default_rng(2)
    props = rng.normal(size=(6, 4, 2))
    node_agent = np.arange(6)
    cur = rng.normal(size=(6, 2))
    feat = rng.normal(size=(6, 3))
    e = graph.build_dsg_edges(props, node_agent, 2, "current", current=cur)
    d = np.sqrt(((cur[:, None] - cur[None]) ** 2).sum(-1))
    assert e.rows() == oracles.knn(d, 2, ~np.eye(6, dtype=bool))
    e = graph.build_dsg_edges(props, node_agent, 2, "feature", features=feat)
    d = np.sqrt(((feat[:, None] - feat[None]) ** 2).sum(-1))
    assert e.rows() == oracles.knn(d, 2, ~np.eye(6, dtype=bool))
    with pytest.raises(ValueError):
        graph.build_dsg_edges(props, node_agent, 2, "bogus")


def test_ssg_without_polylines_is_empty():
    e = graph.build_ssg_edges(np.zeros((3, 4, 2)), np.zeros((0, 5, 2)), 8)
    assert e.rows() == [[], [], []]


def test_edge_dump_round_trip(tmp_path):
    rng = np.random.default_rng(0)
    e1 = graph.knn_select(rng.random((5, 7)), 3, rng.random((5, 7)) < 0.5)
    e2 = graph.knn_select(rng.random((5, 4)), 2)
    path = tmp_path / "edges.txt"
    graph.write_edge_dump(path, [("dsg", e1), ("ssg", e2)])
    parsed = graph.parse_edges(path.read_text().splitlines())
    assert parsed == {"dsg": e1.rows(), "ssg": e2.rows()}


def test_offset_and_concat_keep_padding():
    e = graph.EdgeList(np.array([[1, -1], [0, 2]]), np.array([[0.5, np.inf], [0.1, 0.2]]))
    o = e.offset(10, 100)
    assert o.neighbors.tolist() == [[101, -1], [100, 102]]
    c = graph.EdgeList.concat([e, o], 2)
    assert c.neighbors.shape == (4, 2)
    assert graph.EdgeList.empty(3, 4).counts.tolist() == [0, 0, 0]


def test_dense_edges_cover_all_eligible():
    elig = np.array([[True, False, True], [False, False, False]])
    e = graph.dense_edges(elig)
    assert e.rows() == [[0, 2], []]
