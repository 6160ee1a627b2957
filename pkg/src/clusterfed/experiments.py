"""Experiment entry points: single runs, neighbour ablation and parameter sweeps."""
from __future__ import annotations

import csv
import io
import logging
from dataclasses import dataclass, replace

import numpy as np

from . import datasets
from .config import ConfigError, ExperimentConfig
from .evaluation import MetricReport
from .federation import RunResult, run

log = logging.getLogger(__name__)

SWEEPABLE = {
    "num_clusters": int,
    "top_k": int,
    "learning_rate": float,
    "weight_decay": float,
}


def load_dataset(cfg: ExperimentConfig) -> datasets.Dataset:
    if cfg.toy:
        return datasets.synthetic_dataset(seed=cfg.seed)
    if cfg.dataset_format == "movielens":
        return datasets.load_movielens(cfg.dataset_path, name=cfg.dataset_name or "ml-100k")
    return datasets.load_generic_triples(cfg.dataset_path, (cfg.rating_min, cfg.rating_max),
                                         name=cfg.dataset_name)


def prepare(cfg: ExperimentConfig):
    ds = load_dataset(cfg)
    sp = datasets.split(ds, cfg.effective_split_seed)
    return ds, sp, datasets.make_shards(sp)


def toy_config(**overrides) -> ExperimentConfig:
    """Settings sized for the 50-user synthetic set; runs in seconds."""
    base = dict(toy=True, dim=8, users_per_round=16, total_rounds=30, pretrain_rounds=5,
                eval_every=5, num_pseudo=20, top_k=10, num_clusters=3, recluster_every=10)
    base.update(overrides)
    return ExperimentConfig(**base).validate()


def run_experiment(cfg: ExperimentConfig, prepared=None, on_round=None) -> RunResult:
    ds, sp, shards = prepared or prepare(cfg)
    return run(sp, shards, cfg.dim, cfg.federation(), cfg.privacy(), cfg.clustering(),
               on_round=on_round)


@dataclass
class AblationRow:
    seed: int
    with_neighbors: MetricReport
    without_neighbors: MetricReport
    pretrain_identical: bool

    @property
    def rmse_margin(self) -> float:
        return self.without_neighbors.rmse - self.with_neighbors.rmse


def _states_equal(a, b) -> bool:
    if a is None or b is None:
        return False
    pairs = [(x, y) for x, y in zip(a.model.tensors(), b.model.tensors())]
    pairs += [(a.users.values, b.users.values), (a.items.values, b.items.values)]
    return all(np.array_equal(x, y) for x, y in pairs)


def ablate_neighbors(cfg: ExperimentConfig, seeds=None, prepared=None) -> list[AblationRow]:
    """Paired runs with and without collaborative neighbours, per seed.

    Everything else, including clustering-based sampling, is shared, so the
    two runs coincide exactly through the pre-training rounds.
    """
    seeds = list(seeds) if seeds is not None else [cfg.seed]
    prepared = prepared or prepare(cfg)
    rows = []
    for s in seeds:
        on = run_experiment(replace(cfg, seed=s, use_neighbors=True), prepared)
        off = run_experiment(replace(cfg, seed=s, use_neighbors=False), prepared)
        rows.append(AblationRow(s, on.test, off.test, _states_equal(on.pretrain_state, off.pretrain_state)))
        log.info("ablation seed %d: with %.4f / without %.4f RMSE", s, on.test.rmse, off.test.rmse)
    return rows


def ablation_csv(rows: list[AblationRow]) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["seed", "with_mae", "with_rmse", "without_mae", "without_rmse", "rmse_margin",
                "pretrain_identical"])
    for r in rows:
        w.writerow([r.seed, r.with_neighbors.mae, r.with_neighbors.rmse, r.without_neighbors.mae,
                    r.without_neighbors.rmse, r.rmse_margin, int(r.pretrain_identical)])
    return buf.getvalue()


def parse_values(parameter: str, values) -> list:
    if parameter not in SWEEPABLE:
        raise ConfigError(f"cannot sweep {parameter!r}; choose from {sorted(SWEEPABLE)}")
    if isinstance(values, str):
        values = [v for v in values.split(",") if v.strip()]
    if not values:
        raise ConfigError("sweep needs at least one value")
    return [SWEEPABLE[parameter](v) for v in values]


def sweep(cfg: ExperimentConfig, parameter: str, values, prepared=None):
    """One full run per value with everything else fixed; returns (value, RunResult) pairs."""
    values = parse_values(parameter, values)
    prepared = prepared or prepare(cfg)
    out = []
    for v in values:
        res = run_experiment(replace(cfg, **{parameter: v}).validate(check_paths=False), prepared)
        out.append((v, res))
    return out


def sweep_csv(parameter: str, results) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow([parameter, "mae", "rmse", "num_pairs", "clamped_fraction", "best_round"])
    for v, res in results:
        t = res.test
        w.writerow([v, t.mae, t.rmse, t.num_pairs, t.clamped_fraction, res.best_round])
    return buf.getvalue()
