"""Server-side user clustering, top-k neighbour lists and client sampling."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import kernels


class ClusteringConfigError(ValueError):
    pass


@dataclass(frozen=True)
class ClusterState:
    num_clusters: int
    centroids: np.ndarray  # (num_clusters, d)
    labels: np.ndarray  # (M,)
    created_at_round: int = 0
    inertia: float = float("nan")
    iterations: int = 0

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.num_clusters)

    def members(self, c: int) -> np.ndarray:
        return np.flatnonzero(self.labels == c)

    def to_json(self) -> dict:
        return {
            "num_clusters": self.num_clusters,
            "centroids": self.centroids.tolist(),
            "labels": self.labels.tolist(),
            "created_at_round": self.created_at_round,
            "inertia": self.inertia,
            "iterations": self.iterations,
        }

    @classmethod
    def from_json(cls, doc: dict) -> "ClusterState":
        return cls(
            num_clusters=int(doc["num_clusters"]),
            centroids=np.asarray(doc["centroids"], dtype=np.float64),
            labels=np.asarray(doc["labels"], dtype=np.int64),
            created_at_round=int(doc["created_at_round"]),
            inertia=float(doc["inertia"]),
            iterations=int(doc["iterations"]),
        )


@dataclass(frozen=True)
class NeighborAssignment:
    neighbors: tuple[tuple[int, ...], ...]  # indexed by user id

    def __len__(self):
        return len(self.neighbors)

    def __getitem__(self, user_id: int) -> tuple[int, ...]:
        return self.neighbors[user_id]

    def mean_neighbors(self) -> float:
        return float(np.mean([len(n) for n in self.neighbors])) if self.neighbors else 0.0

    def to_json(self) -> dict:
        return {"neighbors": [list(n) for n in self.neighbors]}

    @classmethod
    def from_json(cls, doc: dict) -> "NeighborAssignment":
        return cls(tuple(tuple(int(v) for v in n) for n in doc["neighbors"]))

    @classmethod
    def empty(cls, num_users: int) -> "NeighborAssignment":
        return cls(tuple(() for _ in range(num_users)))


def _kmeans_pp(X: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    n = X.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = np.sum((X - X[chosen[0]]) ** 2, axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0.0:
            # all remaining points coincide with a centre; pick any unused one
            rest = np.setdiff1d(np.arange(n), chosen)
            nxt = int(rest[rng.integers(rest.size)])
        else:
            nxt = int(np.searchsorted(np.cumsum(d2), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        chosen.append(nxt)
        d2 = np.minimum(d2, np.sum((X - X[nxt]) ** 2, axis=1))
    return X[chosen].copy()


def kmeans(embeddings, num_clusters: int, seed: int, max_iters: int = 100,
           tol: float = 1e-6, created_at_round: int = 0) -> ClusterState:
    """Lloyd's algorithm with k-means++ seeding.

    Stops once the largest centroid move is below ``tol`` or after
    ``max_iters`` iterations. An empty cluster is re-seeded with the point
    currently farthest from its own centroid.
    """
    X = np.ascontiguousarray(getattr(embeddings, "values", embeddings), dtype=np.float64)
    n = X.shape[0]
    if num_clusters < 1 or num_clusters > n:
        raise ClusteringConfigError(f"num_clusters must be in [1, {n}], got {num_clusters}")
    rng = np.random.default_rng(seed)
    centroids = _kmeans_pp(X, num_clusters, rng)
    labels, dist = kernels.nearest_centroid(X, centroids)
    it = 0
    for it in range(1, max_iters + 1):
        new = np.zeros_like(centroids)
        counts = np.bincount(labels, minlength=num_clusters)
        np.add.at(new, labels, X)
        taken = set()
        for c in np.flatnonzero(counts == 0):
            order = np.argsort(-dist, kind="stable")
            far = next(int(i) for i in order if int(i) not in taken)
            taken.add(far)
            new[c] = X[far]
            counts[c] = 1
            dist[far] = 0.0
        nonempty = counts > 0
        new[nonempty] /= counts[nonempty, None]
        shift = float(np.max(np.linalg.norm(new - centroids, axis=1)))
        centroids = new
        labels, dist = kernels.nearest_centroid(X, centroids)
        if shift < tol:
            break
    # final centroids are the means of the final assignment
    counts = np.bincount(labels, minlength=num_clusters)
    means = np.zeros_like(centroids)
    np.add.at(means, labels, X)
    nonempty = counts > 0
    centroids[nonempty] = means[nonempty] / counts[nonempty, None]
    inertia = float(np.sum((X - centroids[labels]) ** 2))
    return ClusterState(num_clusters, centroids, labels.astype(np.int64),
                        created_at_round, inertia, it)


def cosine_similarity(X: np.ndarray) -> np.ndarray:
    norms = np.linalg.norm(X, axis=1)
    norms[norms == 0.0] = 1.0
    Y = X / norms[:, None]
    return Y @ Y.T


def assign_neighbors(state: ClusterState, embeddings, k: int) -> NeighborAssignment:
    """Each user's ``min(k, cluster size - 1)`` most cosine-similar co-members.

    Ties go to the smaller user id.
    """
    X = np.asarray(getattr(embeddings, "values", embeddings), dtype=np.float64)
    if state.labels.shape[0] != X.shape[0]:
        raise ValueError("cluster labels do not cover every user")
    out: list[tuple[int, ...]] = [()] * X.shape[0]
    for c in range(state.num_clusters):
        members = state.members(c)  # ascending ids
        if members.size < 2 or k <= 0:
            for u in members:
                out[u] = ()
            continue
        sim = np.ascontiguousarray(cosine_similarity(X[members]))
        top = kernels.topk_rows(sim, int(k))
        for row, u in enumerate(members):
            out[u] = tuple(int(v) for v in members[top[row]])
    return NeighborAssignment(tuple(out))


def cluster_quotas(sizes, batch: int) -> np.ndarray:
    """Largest-remainder apportionment of ``batch`` seats by cluster size.

    Remainder ties go to the lower cluster index. No quota exceeds its
    cluster's size.
    """
    sizes = np.asarray(sizes, dtype=np.int64)
    total = int(sizes.sum())
    if batch > total:
        raise ClusteringConfigError(f"batch {batch} exceeds population {total}")
    exact = batch * sizes / total
    quotas = np.floor(exact).astype(np.int64)
    short = batch - int(quotas.sum())
    order = np.lexsort((np.arange(sizes.size), -(exact - quotas)))
    for c in order:
        if short == 0:
            break
        if quotas[c] < sizes[c]:
            quotas[c] += 1
            short -= 1
    return quotas


def proportional_sample(state: ClusterState, batch: int, seed: int) -> np.ndarray:
    """Draw ``batch`` users, each cluster contributing in proportion to its size."""
    rng = np.random.default_rng(seed)
    quotas = cluster_quotas(state.sizes(), batch)
    picked = []
    for c in range(state.num_clusters):
        if quotas[c]:
            picked.append(rng.choice(state.members(c), size=int(quotas[c]), replace=False))
    return np.sort(np.concatenate(picked)) if picked else np.empty(0, dtype=np.int64)


def uniform_sample(num_users: int, batch: int, seed: int) -> np.ndarray:
    if batch > num_users:
        raise ClusteringConfigError(f"batch {batch} exceeds population {num_users}")
    rng = np.random.default_rng(seed)
    return np.sort(rng.choice(num_users, size=batch, replace=False))
