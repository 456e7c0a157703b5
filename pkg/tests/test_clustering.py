import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from siamcluster.clustering import (
    Dendrogram,
    cluster_tracks,
    cut_dendrogram,
    hac_ward,
    pairwise_sq_distances,
    read_assignment_csv,
    read_dendrogram_json,
    write_assignment_csv,
    write_dendrogram_json,
)
from siamcluster.errors import ConfigurationError, DimensionMismatchError, FormatError

from oracles import naive_cut, naive_ward


def _partition(assignment):
    return {frozenset(g) for g in assignment.groups()}


def _assert_matches_oracle(X):
    dend = hac_ward(X)
    want = naive_ward(X)
    assert [(m.cluster_a, m.cluster_b, m.new_size) for m in dend.merges] == [(a, b, s) for a, b, _, s in want]
    np.testing.assert_allclose(dend.heights, [c for _, _, c, _ in want], rtol=1e-9, atol=1e-12)
    n = len(X)
    for k in range(1, n + 1):
        assert _partition(cut_dendrogram(dend, k)) == naive_cut(n, want, k)


# -- distances ----------------------------------------------------------------


def test_sq_distance_examples():
    np.testing.assert_array_equal(pairwise_sq_distances([[0.0], [3.0]]), [[0, 9], [9, 0]])
    np.testing.assert_array_equal(pairwise_sq_distances(np.ones((4, 3))), np.zeros((4, 4)))


def test_sq_distance_naive_oracle():
    rng = np.random.default_rng(0)
    X = rng.standard_normal((10, 8))
    want = [[sum((X[i, k] - X[j, k]) ** 2 for k in range(8)) for j in range(10)] for i in range(10)]
    got = pairwise_sq_distances(X)
    np.testing.assert_allclose(got, want, atol=1e-12)
    np.testing.assert_array_equal(got, got.T)


def test_sq_distance_chunked(monkeypatch):
    import siamcluster.clustering as c

    X = np.random.default_rng(1).standard_normal((37, 5))
    full = pairwise_sq_distances(X)
    monkeypatch.setattr(c, "_CHUNK_ELEMS", 17)
    np.testing.assert_array_equal(pairwise_sq_distances(X), full)


def test_sq_distance_errors():
    with pytest.raises(DimensionMismatchError):
        pairwise_sq_distances([[0.0, 1.0], [1.0]])
    with pytest.raises(ConfigurationError):
        pairwise_sq_distances([[0.0, 1.0]])


# -- Ward ---------------------------------------------------------------------


def test_two_points():
    dend = hac_ward([[0.0, 0.0], [3.0, 4.0]])
    assert dend.merges == ((0, 1, 25.0, 2),)


def test_line_cut():
    dend = hac_ward([[0.0], [1.0], [10.0]])
    assert _partition(cut_dendrogram(dend, 2)) == {frozenset({0, 1}), frozenset({2})}


def test_equal_spacing_tie_break():
    dend = hac_ward([[0.0], [1.0], [2.0], [3.0]])
    assert [(m.cluster_a, m.cluster_b) for m in dend.merges] == [(0, 1), (2, 3), (4, 5)]
    assert list(dend.heights) == [1.0, 1.0, 8.0]


def test_duplicate_points_tie_break():
    X = np.array([[1.0, 1.0], [0.0, 0.0], [1.0, 1.0], [0.0, 0.0]])
    _assert_matches_oracle(X)
    assert hac_ward(X).merges[0][:2] == (0, 2)


def test_fifty_points_match_oracle():
    _assert_matches_oracle(np.random.default_rng(2).standard_normal((50, 5)))


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 25), st.integers(1, 6), st.integers(0, 2**31))
def test_random_instances_match_oracle(n, dim, seed):
    _assert_matches_oracle(np.random.default_rng(seed).standard_normal((n, dim)))


def test_integer_grid_matches_oracle():
    rng = np.random.default_rng(3)
    for _ in range(20):
        _assert_matches_oracle(rng.integers(0, 4, size=(int(rng.integers(2, 15)), 2)).astype(float))


def test_heights_monotone():
    rng = np.random.default_rng(4)
    for _ in range(200):
        n, dim = int(rng.integers(2, 61)), int(rng.integers(1, 9))
        h = hac_ward(rng.standard_normal((n, dim)) * rng.uniform(0.1, 10)).heights
        assert np.all(np.diff(h) >= -1e-12 * max(1.0, h.max()))


def test_permutation_invariance():
    rng = np.random.default_rng(5)
    for _ in range(30):
        n = int(rng.integers(3, 30))
        X = rng.standard_normal((n, 3))
        perm = rng.permutation(n)
        for k in (1, 2, 3, n):
            a = cut_dendrogram(hac_ward(X), k)
            b = cut_dendrogram(hac_ward(X[perm]), k, item_ids=perm)
            assert _partition(a) == _partition(b)


def test_matches_scipy():
    scipy_h = pytest.importorskip("scipy.cluster.hierarchy")
    rng = np.random.default_rng(6)
    for _ in range(20):
        X = rng.standard_normal((int(rng.integers(2, 40)), 4))
        ours = hac_ward(X)
        Z = scipy_h.linkage(X, method="ward")
        np.testing.assert_allclose(ours.heights, Z[:, 2] ** 2, rtol=1e-9)
        assert [tuple(sorted(m[:2])) for m in ours.merges] == [tuple(sorted(map(int, z[:2]))) for z in Z]


# -- cut ----------------------------------------------------------------------


def test_cut_extremes():
    dend = hac_ward(np.random.default_rng(7).standard_normal((8, 2)))
    assert sorted(cut_dendrogram(dend, 8).labels) == list(range(8))
    assert set(cut_dendrogram(dend, 1).labels) == {0}
    with pytest.raises(ConfigurationError):
        cut_dendrogram(dend, 0)
    with pytest.raises(ConfigurationError):
        cut_dendrogram(dend, 9)


def test_cut_labels_ordered_by_smallest_member():
    dend = hac_ward([[10.0], [0.0], [10.5], [0.5]])
    a = cut_dendrogram(dend, 2, item_ids=[7, 8, 9, 10])
    assert list(a.labels) == [0, 1, 0, 1]
    assert a.mapping == {7: 0, 8: 1, 9: 0, 10: 1}


@settings(max_examples=40, deadline=None)
@given(st.integers(2, 30), st.integers(0, 2**31), st.data())
def test_cut_is_a_partition(n, seed, data):
    k = data.draw(st.integers(1, n))
    a = cut_dendrogram(hac_ward(np.random.default_rng(seed).standard_normal((n, 2))), k)
    groups = a.groups()
    assert len(groups) == k and all(groups)
    assert sorted(i for g in groups for i in g) == list(range(n))


def test_cluster_tracks():
    reps = np.array([[1.0, 0.0], [0.99, 0.14], [0.0, 1.0]])
    dend, a = cluster_tracks(reps, 2, [5, 6, 9])
    assert a.mapping == {5: 0, 6: 0, 9: 1}
    with pytest.raises(ConfigurationError):
        cluster_tracks(reps, 4, [5, 6, 9])


# -- serialisation ------------------------------------------------------------


def test_dendrogram_and_assignment_round_trip(tmp_path):
    X = np.random.default_rng(8).standard_normal((12, 3))
    dend = hac_ward(X)
    write_dendrogram_json(dend, tmp_path / "d.json")
    assert read_dendrogram_json(tmp_path / "d.json") == dend
    a = cut_dendrogram(dend, 4, item_ids=range(100, 112))
    write_assignment_csv(a, tmp_path / "a.csv")
    b = read_assignment_csv(tmp_path / "a.csv")
    assert b.item_ids == a.item_ids and np.array_equal(b.labels, a.labels) and b.k == 4


def test_malformed_files(tmp_path):
    (tmp_path / "a.csv").write_text("id,c\n1,2\n")
    with pytest.raises(FormatError):
        read_assignment_csv(tmp_path / "a.csv")
    with pytest.raises(FormatError):
        Dendrogram.from_json({"n": 2})
