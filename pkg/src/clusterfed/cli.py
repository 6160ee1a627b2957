"""Command line entry point: ``clusterfed {run,ablate,sweep,validate-data}``."""
from __future__ import annotations

import argparse
import json
import logging
import sys
from dataclasses import fields
from pathlib import Path

from . import datasets, experiments
from .config import ConfigError, ExperimentConfig, load_config
from .federation import reports_to_csv
from .wire import save_checkpoint

log = logging.getLogger("clusterfed")

# file names tried under --data-dir for each known benchmark
DATA_LAYOUT = {
    "filmtrust": ["filmtrust/ratings.txt", "filmtrust.txt", "FilmTrust/ratings.txt"],
    "ml-100k": ["ml-100k/u.data", "u.data"],
    "douban": ["douban/ratings.txt", "douban.txt", "douban/douban.txt"],
}
DATA_RANGES = {"filmtrust": (0.5, 4.0), "ml-100k": (1.0, 5.0), "douban": (1.0, 5.0)}


def _add_config_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="JSON or key: value config file")
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any config field (repeatable)")
    p.add_argument("--toy", action="store_const", const=True, default=None,
                   help="use the bundled synthetic 50-user dataset with small settings")
    p.add_argument("-v", "--verbose", action="store_true")
    g = p.add_argument_group("config fields")
    for f in fields(ExperimentConfig):
        if f.name == "toy":
            continue
        g.add_argument("--" + f.name.replace("_", "-"), dest=f.name, default=None, metavar="V")


def _resolve(args) -> ExperimentConfig:
    overrides = {}
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k.strip()] = v.strip()
    for f in fields(ExperimentConfig):
        v = getattr(args, f.name, None)
        if v is not None:
            overrides[f.name] = v
    base = experiments.toy_config().to_json() if args.toy else None
    return load_config(args.config, overrides, base=base)


class _RunDir:
    """Output directory guarded by an ``incomplete`` marker until ``done()``."""

    def __init__(self, cfg: ExperimentConfig):
        self.path = Path(cfg.output_dir)
        self.path.mkdir(parents=True, exist_ok=True)
        self.marker = self.path / "incomplete"
        self.marker.write_text("run did not finish\n")
        self.write_json("config.json", cfg.to_json())

    def write_text(self, name: str, text: str) -> None:
        (self.path / name).write_text(text)

    def write_json(self, name: str, doc) -> None:
        self.write_text(name, json.dumps(doc, indent=2, sort_keys=True) + "\n")

    def done(self) -> None:
        self.marker.unlink(missing_ok=True)


def cmd_run(cfg: ExperimentConfig) -> int:
    out = _RunDir(cfg)
    ds, sp, shards = experiments.prepare(cfg)
    res = experiments.run_experiment(cfg, (ds, sp, shards))
    out.write_text("rounds.csv", reports_to_csv(res.reports))
    out.write_text("metrics.csv", _metric_csv(res))
    summary = {"dataset": ds.stats(), **res.summary()}
    out.write_json("summary.json", summary)
    bs = res.best_state
    save_checkpoint(out.path / "checkpoint.npz", bs.model, bs.users, bs.items, round=res.best_round)
    out.done()
    t = res.test
    print(f"best round {res.best_round}: test MAE {t.mae:.4f} RMSE {t.rmse:.4f} -> {out.path}")
    return 0


def _metric_csv(res) -> str:
    lines = ["round,mae,rmse,num_pairs,clamped_fraction"]
    for r in res.reports:
        if r.val_rmse == r.val_rmse:
            lines.append(f"{r.round},{r.val_mae!r},{r.val_rmse!r},,")
    t = res.test
    lines.append(f"test@{res.best_round},{t.mae!r},{t.rmse!r},{t.num_pairs},{t.clamped_fraction!r}")
    return "\n".join(lines) + "\n"


def _seeds(cfg: ExperimentConfig) -> list[int]:
    if not cfg.ablation_seeds:
        return [cfg.seed]
    return [int(s) for s in cfg.ablation_seeds.split(",") if s.strip()]


def cmd_ablate(cfg: ExperimentConfig) -> int:
    out = _RunDir(cfg)
    rows = experiments.ablate_neighbors(cfg, _seeds(cfg))
    out.write_text("ablation.csv", experiments.ablation_csv(rows))
    out.write_json("summary.json", {
        "seeds": [r.seed for r in rows],
        "with_neighbors": [r.with_neighbors.as_dict() for r in rows],
        "without_neighbors": [r.without_neighbors.as_dict() for r in rows],
        "rmse_margin": [r.rmse_margin for r in rows],
        "pretrain_identical": all(r.pretrain_identical for r in rows),
    })
    out.done()
    for r in rows:
        print(f"seed {r.seed}: with MAE {r.with_neighbors.mae:.4f} RMSE {r.with_neighbors.rmse:.4f} | "
              f"without MAE {r.without_neighbors.mae:.4f} RMSE {r.without_neighbors.rmse:.4f}")
    return 0


def cmd_sweep(cfg: ExperimentConfig) -> int:
    if not cfg.sweep_parameter:
        raise ConfigError("sweep needs sweep_parameter and sweep_values")
    values = experiments.parse_values(cfg.sweep_parameter, cfg.sweep_values)
    out = _RunDir(cfg)
    results = experiments.sweep(cfg, cfg.sweep_parameter, values)
    out.write_text("sweep.csv", experiments.sweep_csv(cfg.sweep_parameter, results))
    out.done()
    for v, res in results:
        print(f"{cfg.sweep_parameter}={v}: MAE {res.test.mae:.4f} RMSE {res.test.rmse:.4f}")
    return 0


def validate_data(paths: dict) -> list[dict]:
    """Load each named benchmark file and compare against the published counts."""
    rows = []
    for key, path in paths.items():
        if path is None or not Path(path).is_file():
            rows.append({"dataset": key, "path": str(path) if path else None, "status": "MISSING"})
            continue
        try:
            if key == "ml-100k":
                ds = datasets.load_movielens(path)
            else:
                ds = datasets.load_generic_triples(path, DATA_RANGES[key], name=key)
        except datasets.DatasetError as exc:
            rows.append({"dataset": key, "path": str(path), "status": "ERROR", "error": str(exc)})
            continue
        chk = datasets.check_known_stats(ds, key)
        rows.append({"path": str(path), **chk, "status": "PASS" if chk["pass"] else "FAIL",
                     "sparsity": ds.stats()["sparsity"]})
    return rows


def _find(data_dir: Path, key: str):
    for rel in DATA_LAYOUT[key]:
        if (data_dir / rel).is_file():
            return data_dir / rel
    return None


def cmd_validate_data(args) -> int:
    paths = {}
    data_dir = Path(args.data_dir) if args.data_dir else None
    for key, flag in (("filmtrust", args.filmtrust), ("ml-100k", args.ml100k), ("douban", args.douban)):
        if flag:
            paths[key] = flag
        elif data_dir is not None:
            paths[key] = _find(data_dir, key)
    if not paths:
        raise ConfigError("give --data-dir or at least one of --ml100k/--filmtrust/--douban")
    rows = validate_data(paths)
    print(f"{'dataset':<10} {'users':>6} {'items':>6} {'ratings':>8}  status")
    for r in rows:
        if "observed" in r:
            o = r["observed"]
            print(f"{r['dataset']:<10} {o['users']:>6} {o['items']:>6} {o['ratings']:>8}  {r['status']}")
        else:
            print(f"{r['dataset']:<10} {'-':>6} {'-':>6} {'-':>8}  {r['status']}  {r.get('error', r.get('path') or '')}")
    if args.json:
        Path(args.json).write_text(json.dumps(rows, indent=2) + "\n")
    return 0 if all(r["status"] == "PASS" for r in rows) else 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="clusterfed", description="Federated graph-attention recommender simulator with clustered neighbours")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "train once and evaluate on the test split"),
                        ("ablate", "paired runs with and without collaborative neighbours"),
                        ("sweep", "one run per value of a hyperparameter")):
        _add_config_flags(sub.add_parser(name, help=help_))
    v = sub.add_parser("validate-data", help="check benchmark files against published statistics")
    v.add_argument("--data-dir")
    v.add_argument("--ml100k")
    v.add_argument("--filmtrust")
    v.add_argument("--douban")
    v.add_argument("--json", help="also write the report as JSON")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(asctime)s %(name)s %(message)s")
    try:
        if args.command == "validate-data":
            return cmd_validate_data(args)
        cfg = _resolve(args)
        return {"run": cmd_run, "ablate": cmd_ablate, "sweep": cmd_sweep}[args.command](cfg)
    except (ConfigError, datasets.DatasetError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except Exception as exc:  # noqa: BLE001 - report and exit non-zero, marker stays
        log.exception("run failed")
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
