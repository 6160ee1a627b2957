"""Held-out rating error of the global model."""
from __future__ import annotations

import math
from dataclasses import asdict, dataclass

import numpy as np

from .model import ModelParams, build_graph, forward, predict, refine_query_items

ITEM_SCORING = ("refined", "raw")


@dataclass(frozen=True)
class MetricReport:
    mae: float
    rmse: float
    num_pairs: int
    clamped_fraction: float
    skipped: int = 0

    def as_dict(self) -> dict:
        return asdict(self)


def metrics_from_residuals(residuals, clamped: int = 0, skipped: int = 0) -> MetricReport:
    r = np.asarray(residuals, dtype=np.float64)
    if r.size == 0:
        return MetricReport(float("nan"), float("nan"), 0, 0.0, skipped)
    return MetricReport(
        mae=float(np.mean(np.abs(r))),
        rmse=float(math.sqrt(np.mean(r * r))),
        num_pairs=int(r.size),
        clamped_fraction=clamped / r.size,
        skipped=skipped,
    )


def evaluate(model: ModelParams, user_table, item_table, shards, heldout, neighbors,
             rating_range, item_scoring: str = "refined") -> MetricReport:
    """MAE / RMSE over ``heldout`` triples with predictions clamped to ``rating_range``.

    Each user's local graph is built from its training items and current
    neighbours. Held-out items are not in that graph; with
    ``item_scoring="refined"`` they are passed through the same leaf update
    the GAT applies to training items (listening to the user node without
    feeding it), with ``"raw"`` the item table row is scored directly.

    ``shards`` maps user id to :class:`~clusterfed.datasets.UserShard` (a list
    ordered by user id also works). Users without a shard are skipped.
    """
    if item_scoring not in ITEM_SCORING:
        raise ValueError(f"item_scoring must be one of {ITEM_SCORING}")
    if not isinstance(shards, dict):
        shards = {s.user_id: s for s in shards}
    U = getattr(user_table, "values", user_table)
    E = getattr(item_table, "values", item_table)
    lo, hi = rating_range
    users = np.asarray(heldout.users)
    items = np.asarray(heldout.items)
    ratings = np.asarray(heldout.ratings, dtype=np.float64)
    order = np.argsort(users, kind="stable")
    starts = np.flatnonzero(np.r_[True, users[order][1:] != users[order][:-1]]) if users.size else []
    bounds = list(starts) + [users.size]

    residuals = []
    clamped = 0
    skipped = 0
    for a, b in zip(bounds[:-1], bounds[1:]):
        idx = order[a:b]
        u = int(users[idx[0]])
        shard = shards.get(u)
        if shard is None or shard.q == 0:
            skipped += idx.size
            continue
        nbrs = list(neighbors[u]) if neighbors is not None else []
        graph = build_graph(U[u], U[nbrs] if nbrs else np.empty((0, U.shape[1])),
                            E, shard.items, shard.ratings)
        ref_user, _, cache = forward(model, graph)
        q_items = E[items[idx]]
        if item_scoring == "refined":
            q_items = refine_query_items(model, cache, q_items)
        pred = predict(ref_user, q_items)
        clipped = np.clip(pred, lo, hi)
        clamped += int(np.count_nonzero(clipped != pred))
        residuals.append(ratings[idx] - clipped)
    res = np.concatenate(residuals) if residuals else np.empty(0)
    return metrics_from_residuals(res, clamped, skipped)


def constant_baseline(train, heldout, rating_range) -> MetricReport:
    """Error of predicting the global training mean for every held-out pair."""
    mean = float(np.mean(train.ratings))
    pred = np.clip(mean, *rating_range)
    return metrics_from_residuals(np.asarray(heldout.ratings) - pred)
