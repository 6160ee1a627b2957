import itertools

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clusterfed.clustering import (ClusterState, ClusteringConfigError, NeighborAssignment, assign_neighbors,
                               cluster_quotas, kmeans, proportional_sample, uniform_sample)


def _best_partition(X, k):
    """Exhaustive minimum-SSE assignment into k non-empty groups."""
    best = None
    for labels in itertools.product(range(k), repeat=len(X)):
        if len(set(labels)) < k:
            continue
        lab = np.array(labels)
        sse = sum(((X[lab == c] - X[lab == c].mean(0)) ** 2).sum() for c in range(k))
        if best is None or sse < best[0] - 1e-12:
            best = (sse, lab)
    return best


def _same_partition(a, b):
    return {frozenset(np.flatnonzero(a == c)) for c in set(a)} == {frozenset(np.flatnonzero(b == c)) for c in set(b)}


def test_kmeans_two_obvious_clusters():
    X = np.array([[0, 0], [0, 1], [10, 10], [10, 11]], float)
    sse, lab = _best_partition(X, 2)
    st_ = kmeans(X, 2, seed=0)
    assert _same_partition(st_.labels, lab)
    cents = sorted(map(tuple, st_.centroids))
    assert cents == [(0.0, 0.5), (10.0, 10.5)]
    assert st_.inertia == pytest.approx(sse)


@pytest.mark.parametrize("seed", range(5))
def test_kmeans_matches_brute_force_on_small_sets(seed):
    rng = np.random.default_rng(seed)
    X = np.vstack([rng.normal(0, 0.3, size=(3, 2)), rng.normal(5, 0.3, size=(3, 2)),
                   rng.normal([0, 5], 0.3, size=(2, 2))])
    sse, lab = _best_partition(X, 3)
    st_ = kmeans(X, 3, seed=seed)
    assert st_.inertia == pytest.approx(sse, rel=1e-9)


def test_kmeans_single_cluster_is_mean():
    X = np.random.default_rng(0).normal(size=(20, 3))
    st_ = kmeans(X, 1, seed=0)
    np.testing.assert_allclose(st_.centroids[0], X.mean(0), atol=1e-14)
    assert set(st_.labels.tolist()) == {0}


def test_kmeans_one_cluster_per_point():
    X = np.random.default_rng(1).normal(size=(6, 2))
    st_ = kmeans(X, 6, seed=0)
    assert st_.inertia == pytest.approx(0.0, abs=1e-20)
    assert sorted(st_.labels.tolist()) == list(range(6))


def test_kmeans_rejects_too_many_clusters():
    with pytest.raises(ClusteringConfigError):
        kmeans(np.zeros((3, 2)), 4, seed=0)


def test_kmeans_reseeds_empty_clusters_with_duplicates():
    # many duplicates make k-means++ pick coincident seeds
    X = np.array([[0.0, 0.0]] * 6 + [[1.0, 0.0], [5.0, 5.0]])
    st_ = kmeans(X, 3, seed=0)
    assert np.all(st_.sizes() > 0)


def test_kmeans_final_assignment_locally_optimal():
    X = np.random.default_rng(2).normal(size=(200, 4))
    st_ = kmeans(X, 5, seed=3)
    d2 = ((X[:, None, :] - st_.centroids[None]) ** 2).sum(-1)
    assert np.all(d2[np.arange(200), st_.labels] <= d2.min(1) + 1e-12)
    for c in range(5):
        np.testing.assert_allclose(st_.centroids[c], X[st_.labels == c].mean(0), atol=1e-12)
    assert st_.sizes().sum() == 200


def test_kmeans_inertia_non_increasing():
    X = np.random.default_rng(4).normal(size=(150, 3))
    prev = np.inf
    for iters in range(1, 8):
        st_ = kmeans(X, 4, seed=1, max_iters=iters, tol=0.0)
        assert st_.inertia <= prev + 1e-9
        prev = st_.inertia


def _state(labels, d=2):
    labels = np.asarray(labels)
    k = labels.max() + 1
    return ClusterState(int(k), np.zeros((k, d)), labels)


def test_neighbors_size_rule():
    X = np.random.default_rng(0).normal(size=(5, 3))
    nb = assign_neighbors(_state([0] * 5), X, k=200)
    assert all(len(nb[u]) == 4 for u in range(5))


def test_identical_embeddings_rank_first():
    X = np.array([[1.0, 0.0], [0.0, 1.0], [1.0, 0.0], [0.6, 0.8]])
    nb = assign_neighbors(_state([0, 0, 0, 0]), X, k=2)
    assert nb[0][0] == 2 and nb[2][0] == 0


def test_neighbors_match_exhaustive_sort():
    X = np.array([[1, 0, 0], [0.9, 0.1, 0], [0, 1, 0], [0.5, 0.5, 0], [0, 0, 1], [0.7, 0, 0.7]], float)
    nb = assign_neighbors(_state([0] * 6), X, k=3)
    unit = X / np.linalg.norm(X, axis=1, keepdims=True)
    for u in range(6):
        sims = [(-(unit[u] @ unit[v]), v) for v in range(6) if v != u]
        assert list(nb[u]) == [v for _, v in sorted(sims)[:3]]


def test_neighbors_never_cross_clusters_and_exclude_self():
    rng = np.random.default_rng(3)
    X = rng.normal(size=(30, 4))
    labels = rng.integers(0, 4, size=30)
    st_ = _state(labels)
    nb = assign_neighbors(st_, X, k=5)
    sizes = np.bincount(labels, minlength=st_.num_clusters)
    for u in range(30):
        assert u not in nb[u] and len(set(nb[u])) == len(nb[u])
        assert all(labels[v] == labels[u] for v in nb[u])
        assert len(nb[u]) == min(5, sizes[labels[u]] - 1)


def test_neighbor_ties_break_by_user_id():
    X = np.ones((4, 2))
    nb = assign_neighbors(_state([0] * 4), X, k=2)
    assert nb[3] == (0, 1) and nb[0] == (1, 2)


def test_quota_example():
    assert cluster_quotas([500, 250, 250], 256).tolist() == [128, 64, 64]


@settings(max_examples=200, deadline=None)
@given(st.lists(st.integers(1, 300), min_size=1, max_size=20), st.data())
def test_quotas_sum_to_batch(sizes, data):
    batch = data.draw(st.integers(0, sum(sizes)))
    q = cluster_quotas(sizes, batch)
    assert q.sum() == batch
    assert np.all(q <= np.asarray(sizes)) and np.all(q >= 0)
    # each quota stays within one seat of the exact share
    exact = batch * np.asarray(sizes) / sum(sizes)
    assert np.all(np.abs(q - exact) < 1 + 1e-9)


def test_proportional_sample():
    labels = np.array([0] * 500 + [1] * 250 + [2] * 250)
    st_ = _state(labels)
    s = proportional_sample(st_, 256, seed=0)
    assert len(s) == 256 and len(set(s.tolist())) == 256
    assert np.bincount(labels[s]).tolist() == [128, 64, 64]
    assert np.array_equal(s, proportional_sample(st_, 256, seed=0))


def test_proportional_single_cluster_and_full_batch():
    st_ = _state([0] * 10)
    assert len(proportional_sample(st_, 4, 1)) == 4
    assert sorted(proportional_sample(_state([0, 1, 1, 0, 2]), 5, 1).tolist()) == [0, 1, 2, 3, 4]
    with pytest.raises(ClusteringConfigError):
        proportional_sample(st_, 11, 0)


def test_uniform_sample():
    assert sorted(uniform_sample(7, 7, 0).tolist()) == list(range(7))
    one = uniform_sample(7, 1, 3)
    assert one.shape == (1,) and 0 <= one[0] < 7
    assert np.array_equal(uniform_sample(50, 9, 2), uniform_sample(50, 9, 2))
    with pytest.raises(ClusteringConfigError):
        uniform_sample(3, 4, 0)


def test_json_round_trip():
    X = np.random.default_rng(0).normal(size=(12, 3))
    st_ = kmeans(X, 3, seed=0)
    back = ClusterState.from_json(st_.to_json())
    assert np.array_equal(back.labels, st_.labels) and np.array_equal(back.centroids, st_.centroids)
    nb = assign_neighbors(st_, X, 2)
    assert NeighborAssignment.from_json(nb.to_json()) == nb
