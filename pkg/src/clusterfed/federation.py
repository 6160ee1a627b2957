"""Round orchestration for the in-process federated simulation.

Rounds ``1..pretrain_rounds`` sample users uniformly and train on
first-order graphs. After the last pre-training round the server clusters
the user table, picks each user's top-k co-cluster neighbours and from then
on samples users proportionally per cluster, refreshing the clustering every
``recluster_every`` rounds.
"""
from __future__ import annotations

import csv
import io
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields

import numpy as np

from . import clustering
from .clustering import ClusterState, NeighborAssignment
from .datasets import SplitDataset, UserShard
from .evaluation import MetricReport, evaluate
from .model import (EmbeddingTable, ModelParams, NumericError, backward, build_graph,
                    forward, init_params, loss, predict)
from .privacy import PrivacyConfig, privatize_update
from .server import aggregate, apply_updates
from .wire import ClientUpdate, downlink_size

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class FederationConfig:
    learning_rate: float = 0.05
    weight_decay: float = 0.0005
    users_per_round: int = 256
    pretrain_rounds: int = 5
    total_rounds: int = 200
    recluster_every: int = 10
    eval_every: int = 5
    seed: int = 0
    row_weighting: str = "round"
    item_scoring: str = "refined"
    init_scheme: str = "uniform"
    workers: int = 1

    def __post_init__(self):
        if not self.learning_rate > 0:
            raise ValueError("learning_rate must be > 0")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.users_per_round < 1:
            raise ValueError("users_per_round must be >= 1")
        if self.total_rounds < 1:
            raise ValueError("total_rounds must be >= 1")
        if not 0 <= self.pretrain_rounds < self.total_rounds:
            raise ValueError("pretrain_rounds must be in [0, total_rounds)")
        if self.recluster_every < 1 or self.eval_every < 1:
            raise ValueError("recluster_every and eval_every must be >= 1")


@dataclass(frozen=True)
class ClusterConfig:
    num_clusters: int = 10
    top_k: int = 200
    max_iters: int = 100
    tol: float = 1e-6
    use_neighbors: bool = True


@dataclass
class RoundReport:
    round: int
    phase: str
    participants: int
    train_loss: float
    val_mae: float = float("nan")
    val_rmse: float = float("nan")
    uplink_bytes: int = 0
    downlink_bytes: int = 0
    neighbor_ids_sent: int = 0
    mean_neighbors: float = 0.0
    seconds: float = 0.0

    @classmethod
    def csv_header(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def csv_row(self, timing: bool = False) -> list:
        row = asdict(self)
        if not timing:
            row["seconds"] = ""
        return [_fmt(row[k]) for k in self.csv_header()]


def _fmt(v):
    if isinstance(v, float):
        return "" if v != v else repr(round(v, 10))
    return v


def reports_to_csv(reports, timing: bool = False) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(RoundReport.csv_header())
    for r in reports:
        w.writerow(r.csv_row(timing))
    return buf.getvalue()


@dataclass
class GlobalState:
    model: ModelParams
    users: EmbeddingTable
    items: EmbeddingTable
    neighbors: NeighborAssignment
    clusters: ClusterState | None = None
    round: int = 0

    def snapshot(self) -> "GlobalState":
        return GlobalState(self.model.copy(), EmbeddingTable(self.users.values.copy()),
                           EmbeddingTable(self.items.values.copy()), self.neighbors,
                           self.clusters, self.round)


@dataclass
class RunResult:
    reports: list[RoundReport]
    best_round: int
    best_val: MetricReport | None
    test: MetricReport | None
    best_state: GlobalState
    final_state: GlobalState
    pretrain_state: GlobalState | None = None
    wall_seconds: float = 0.0
    extra: dict = field(default_factory=dict)

    def summary(self) -> dict:
        clustered = [r for r in self.reports if r.phase == "clustered"]
        return {
            "best_round": self.best_round,
            "best_val": self.best_val.as_dict() if self.best_val else None,
            "test": self.test.as_dict() if self.test else None,
            "rounds": len(self.reports),
            "total_uplink_bytes": int(sum(r.uplink_bytes for r in self.reports)),
            "total_downlink_bytes": int(sum(r.downlink_bytes for r in self.reports)),
            "total_neighbor_ids_sent": int(sum(r.neighbor_ids_sent for r in self.reports)),
            "mean_neighbors_per_user": (
                float(np.mean([r.mean_neighbors for r in clustered])) if clustered else 0.0),
            "max_neighbors_per_user": self.extra.get("max_neighbors_per_user", 0),
            **{k: v for k, v in self.extra.items() if k != "max_neighbors_per_user"},
        }


def derive_seed(master: int, *keys: int) -> int:
    return int(np.random.SeedSequence([int(master), *map(int, keys)]).generate_state(1, np.uint32)[0])


# stream tags for derive_seed
_S_INIT, _S_SAMPLE, _S_CLIENT, _S_KMEANS = 1, 2, 3, 4


def client_round(shard: UserShard, model: ModelParams, e_u, neighbor_embs, item_table,
                 cfg: PrivacyConfig, seed) -> ClientUpdate:
    """Local forward/backward on the client's graph followed by privatisation."""
    table = getattr(item_table, "values", item_table)
    graph = build_graph(e_u, neighbor_embs, table, shard.items, shard.ratings)
    ref_user, ref_items, cache = forward(model, graph)
    loss(predict(ref_user, ref_items), graph.ratings)
    grads = backward(model, graph, cache)
    return privatize_update(grads, shard.user_id, table.shape[0], cfg, seed)


def _population_state(state: ClusterState, pop: np.ndarray) -> ClusterState:
    """Restrict a clustering over all users to the sampled population (indices into ``pop``)."""
    return ClusterState(state.num_clusters, state.centroids, state.labels[pop],
                        state.created_at_round, state.inertia, state.iterations)


def recluster(state: GlobalState, ccfg: ClusterConfig, seed: int, round_idx: int) -> None:
    cs = clustering.kmeans(state.users, ccfg.num_clusters, seed, ccfg.max_iters, ccfg.tol,
                           created_at_round=round_idx)
    state.clusters = cs
    if ccfg.use_neighbors:
        state.neighbors = clustering.assign_neighbors(cs, state.users, ccfg.top_k)
    else:
        state.neighbors = NeighborAssignment.empty(state.users.rows)


def run(split_data: SplitDataset, shards: list[UserShard], dim: int = 128,
        fed: FederationConfig = FederationConfig(), privacy: PrivacyConfig = PrivacyConfig(),
        clus: ClusterConfig = ClusterConfig(), on_round=None) -> RunResult:
    """Simulate a full training run and evaluate the best-validation state on test."""
    t_start = time.perf_counter()
    M, N = split_data.num_users, split_data.num_items
    rating_range = split_data.train.rating_range
    by_user = {s.user_id: s for s in shards}
    pop = np.array(sorted(by_user), dtype=np.int64)
    if fed.users_per_round > pop.size:
        raise ValueError(f"users_per_round {fed.users_per_round} exceeds {pop.size} clients")

    lo, hi = rating_range
    model, users, items = init_params(dim, derive_seed(fed.seed, _S_INIT), M, N,
                                      fed.init_scheme, base_score=(lo + hi) / 2.0)
    state = GlobalState(model, users, items, NeighborAssignment.empty(M))
    reports: list[RoundReport] = []
    best: tuple[float, int, MetricReport, GlobalState] | None = None
    pretrain_state = state.snapshot() if fed.pretrain_rounds == 0 else None
    max_nbrs = 0
    pool = ThreadPoolExecutor(fed.workers) if fed.workers > 1 else None

    try:
        for r in range(1, fed.total_rounds + 1):
            t0 = time.perf_counter()
            clustered = r > fed.pretrain_rounds
            if clustered and (r - fed.pretrain_rounds - 1) % fed.recluster_every == 0:
                recluster(state, clus, derive_seed(fed.seed, _S_KMEANS, r), r - 1)
            sample_seed = derive_seed(fed.seed, _S_SAMPLE, r)
            if clustered:
                picks = clustering.proportional_sample(
                    _population_state(state.clusters, pop), fed.users_per_round, sample_seed)
            else:
                picks = clustering.uniform_sample(pop.size, fed.users_per_round, sample_seed)
            participants = pop[picks]

            U, E = state.users.values, state.items.values

            def one(uid):
                nbr = list(state.neighbors[uid]) if clustered else []
                nbr_rows = U[nbr] if nbr else np.empty((0, dim))
                up = client_round(by_user[uid], state.model, U[uid], nbr_rows, E, privacy,
                                  derive_seed(fed.seed, _S_CLIENT, r, uid))
                return up, len(nbr)

            results = list(pool.map(one, participants)) if pool else [one(u) for u in participants]
            updates = [up for up, _ in results]
            n_sent = [k for _, k in results]
            max_nbrs = max([max_nbrs, *n_sent])

            agg = aggregate(updates, M, N, fed.row_weighting)
            new = apply_updates(state.model, state.users, state.items, agg,
                                fed.learning_rate, fed.weight_decay)
            for name, t in zip(("theta", "users", "items"),
                               (np.concatenate([x.ravel() for x in new[0].tensors()]),
                                new[1].values, new[2].values)):
                if not np.all(np.isfinite(t)):
                    raise NumericError(f"non-finite global {name} after round {r}")
            state.model, state.users, state.items = new
            state.round = r

            w = np.array([up.weight for up in updates], dtype=np.float64)
            rep = RoundReport(
                round=r,
                phase="clustered" if clustered else "pretrain",
                participants=len(updates),
                train_loss=float(np.sum(w * [up.train_loss for up in updates]) / w.sum()),
                uplink_bytes=int(sum(up.wire_size() for up in updates)),
                downlink_bytes=int(sum(downlink_size(dim, k, N) for k in n_sent)),
                neighbor_ids_sent=int(sum(n_sent)),
                mean_neighbors=float(np.mean(n_sent)),
            )
            if r == fed.pretrain_rounds:
                pretrain_state = state.snapshot()
            if r % fed.eval_every == 0 or r == fed.total_rounds:
                val = evaluate(state.model, state.users, state.items, by_user,
                               split_data.validation, state.neighbors if clustered else None,
                               rating_range, fed.item_scoring)
                rep.val_mae, rep.val_rmse = val.mae, val.rmse
                if best is None or val.rmse < best[0]:
                    best = (val.rmse, r, val, state.snapshot())
            rep.seconds = time.perf_counter() - t0
            reports.append(rep)
            log.info("round %d %s loss=%.4f val_rmse=%s", r, rep.phase, rep.train_loss,
                     f"{rep.val_rmse:.4f}" if rep.val_rmse == rep.val_rmse else "-")
            if on_round is not None:
                on_round(rep)
    finally:
        if pool:
            pool.shutdown()

    _, best_round, best_val, best_state = best
    test = None
    if len(split_data.test):
        nb = best_state.neighbors if best_round > fed.pretrain_rounds else None
        test = evaluate(best_state.model, best_state.users, best_state.items, by_user,
                        split_data.test, nb, rating_range, fed.item_scoring)
    return RunResult(reports, best_round, best_val, test, best_state, state, pretrain_state,
                     time.perf_counter() - t_start, {"max_neighbors_per_user": max_nbrs})
