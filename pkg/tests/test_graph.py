import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metselect.graph import (
    DatasetError, Graph, SbmSpec, SplitError, edge_label_homophily, generate_sbm, load_dataset,
    make_splits, normalize_adjacency, save_dataset,
)


def toy(edges, n=None, labels=None, C=2):
    edges = np.asarray(edges, dtype=np.int64).reshape(-1, 2)
    n = n or int(edges.max()) + 1
    labels = np.zeros(n, dtype=int) if labels is None else labels
    return Graph(np.zeros((n, 1)), edges, labels, C)


def write_dir(path, feats, labels, edges):
    path.mkdir(parents=True, exist_ok=True)
    (path / "features.csv").write_text("".join(f"{i}," + ",".join(map(str, r)) + "\n" for i, r in enumerate(feats)))
    (path / "labels.csv").write_text("".join(f"{i},{l}\n" for i, l in enumerate(labels)))
    (path / "edges.csv").write_text("".join(f"{u},{v}\n" for u, v in edges))


# -- graph invariants ---------------------------------------------------------

def test_graph_rejects_bad_input():
    with pytest.raises(ValueError, match="self-loop"):
        toy([[1, 1]], n=2)
    with pytest.raises(ValueError, match="duplicate"):
        toy([[0, 1], [1, 0]])
    with pytest.raises(ValueError, match="endpoint"):
        toy([[0, 5]], n=3)
    with pytest.raises(ValueError, match="labels"):
        Graph(np.zeros((2, 1)), [[0, 1]], [0, 3], 2)
    with pytest.raises(ValueError, match="non-finite"):
        Graph(np.array([[np.nan], [0.0]]), [[0, 1]], [0, 1], 2)


def test_graph_arrays_are_read_only():
    g = toy([[0, 1]])
    with pytest.raises(ValueError):
        g.edges[0, 0] = 1


# -- loading ------------------------------------------------------------------

def test_load_two_node_toy(tmp_path):
    write_dir(tmp_path, [[1.0, 2.0], [3.0, 4.0]], [0, 1], [(0, 1)])
    (tmp_path / "splits.json").write_text(json.dumps([{"train": [0, 1], "val": [], "test": []}]))
    g, splits = load_dataset(tmp_path)
    assert g.num_nodes == 2 and g.num_edges == 1 and g.num_classes == 2
    assert len(splits) == 1


def test_load_rejects_self_loop_with_line(tmp_path):
    write_dir(tmp_path, [[0.0]] * 6, [0, 1] * 3, [(0, 1), (5, 5)])
    with pytest.raises(DatasetError, match=r"edges.csv:2: self-loop"):
        load_dataset(tmp_path)


def test_load_rejects_duplicate_and_ragged(tmp_path):
    write_dir(tmp_path / "a", [[0.0]] * 3, [0, 1, 0], [(0, 1), (1, 0)])
    with pytest.raises(DatasetError, match="duplicate"):
        load_dataset(tmp_path / "a")
    write_dir(tmp_path / "b", [[0.0], [1.0, 2.0]], [0, 1], [(0, 1)])
    with pytest.raises(DatasetError, match="features.csv:2: ragged"):
        load_dataset(tmp_path / "b")


def test_load_missing_file(tmp_path):
    with pytest.raises(DatasetError, match="missing"):
        load_dataset(tmp_path)


def test_save_load_roundtrip(tmp_path):
    g = generate_sbm(SbmSpec(n=40, C=4, seed=2))
    splits = make_splits(g, n_splits=2, seed=1)
    save_dataset(g, tmp_path, splits)
    h, s2 = load_dataset(tmp_path)
    np.testing.assert_array_equal(h.features, g.features)
    np.testing.assert_array_equal(h.edges, g.edges)
    np.testing.assert_array_equal(h.labels, g.labels)
    for a, b in zip(splits, s2):
        np.testing.assert_array_equal(a.train, b.train)


# -- normalization ------------------------------------------------------------

def test_normalize_single_edge():
    g = toy([[0, 1]])
    np.testing.assert_allclose(normalize_adjacency(g).to_dense(), [[0, 1], [1, 0]])
    np.testing.assert_allclose(normalize_adjacency(g, self_loops=True).to_dense(), np.full((2, 2), 0.5))


def test_normalize_triangle():
    a = normalize_adjacency(toy([[0, 1], [1, 2], [0, 2]])).to_dense()
    np.testing.assert_allclose(a, 0.5 * (np.ones((3, 3)) - np.eye(3)))


def test_isolated_node_row_is_zero():
    a = normalize_adjacency(toy([[0, 1]], n=3)).to_dense()
    np.testing.assert_array_equal(a[2], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**31 - 1), st.booleans())
def test_normalized_adjacency_symmetric_and_contractive(seed, loops):
    g = generate_sbm(SbmSpec(n=25, C=2, p_in=0.3, p_out=0.1, f=2, seed=seed))
    a = normalize_adjacency(g, self_loops=loops).to_dense()
    np.testing.assert_allclose(a, a.T, atol=1e-15)
    # the spectrum of D^-1/2 A D^-1/2 lies in [-1, 1]
    assert np.abs(np.linalg.eigvalsh(a)).max() <= 1 + 1e-12


def test_regular_graph_with_self_loops_has_unit_row_sums():
    cycle = toy([[i, (i + 1) % 6] for i in range(6)])
    np.testing.assert_allclose(normalize_adjacency(cycle, self_loops=True).row_sums(), 1.0)


# -- SBM ----------------------------------------------------------------------

def test_sbm_is_bit_reproducible():
    a, b = generate_sbm(SbmSpec(seed=5)), generate_sbm(SbmSpec(seed=5))
    assert a.features.tobytes() == b.features.tobytes()
    np.testing.assert_array_equal(a.edges, b.edges)


def test_sbm_equal_probabilities_give_chance_homophily():
    h = [edge_label_homophily(generate_sbm(SbmSpec(n=200, C=4, p_in=0.05, p_out=0.05, seed=s))) for s in range(10)]
    assert abs(np.mean(h) - 0.25) <= 0.05


def test_sbm_no_cross_edges_is_fully_homophilic():
    assert edge_label_homophily(generate_sbm(SbmSpec(n=60, C=2, p_in=0.2, p_out=0.0))) == 1.0


def test_sbm_default_homophily_range():
    h = [edge_label_homophily(generate_sbm(SbmSpec(seed=s))) for s in range(10)]
    assert 0.7 <= np.mean(h) <= 0.85


def test_sbm_spec_validation():
    for bad in (dict(p_in=1.5), dict(n=2, C=3), dict(mu_sig=-1.0)):
        with pytest.raises(ValueError):
            SbmSpec(**bad)


# -- homophily ----------------------------------------------------------------

def test_homophily_extremes():
    assert edge_label_homophily(toy([[0, 1], [1, 2]])) == 1.0
    assert edge_label_homophily(toy([[0, 1], [2, 3]], labels=np.array([0, 1, 0, 1]))) == 0.0
    with pytest.raises(ValueError):
        edge_label_homophily(toy(np.empty((0, 2)), n=3))


def test_homophily_invariant_under_relabeling():
    g = generate_sbm(SbmSpec(n=50, C=3, p_in=0.2, p_out=0.05, seed=0))
    perm = np.random.default_rng(0).permutation(50)
    assert edge_label_homophily(g.permute(perm)) == pytest.approx(edge_label_homophily(g))


# -- splits -------------------------------------------------------------------

def test_split_sizes_and_disjointness():
    g = toy([[0, 1]], n=10, labels=np.arange(10) % 2)
    for s in make_splits(g, n_splits=5, seed=0):
        assert (len(s.train), len(s.val), len(s.test)) == (6, 2, 2)
        assert not set(s.train) & set(s.val) and not set(s.val) & set(s.test) and not set(s.train) & set(s.test)
        assert set(g.labels[s.train]) == {0, 1}


def test_splits_deterministic_and_distinct():
    g = generate_sbm(SbmSpec(n=100, C=4, seed=1))
    a, b = make_splits(g, seed=3), make_splits(g, seed=3)
    assert all(np.array_equal(x.train, y.train) for x, y in zip(a, b))
    trains = {tuple(s.train) for s in a}
    assert len(trains) == 10


def test_split_error_when_class_missing_from_train():
    g = toy([[0, 1]], n=10, labels=np.array([0] * 9 + [1]))
    with pytest.raises(SplitError):
        make_splits(g, fractions=(0.0, 0.5, 0.5), n_splits=1)
