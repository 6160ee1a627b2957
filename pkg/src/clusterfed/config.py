"""Experiment configuration: one flat document, defaults, validation and overrides."""
from __future__ import annotations

import json
from dataclasses import asdict, dataclass, fields, replace
from pathlib import Path

from .federation import ClusterConfig, FederationConfig
from .privacy import PrivacyConfig


class ConfigError(ValueError):
    pass


DATASET_FORMATS = ("movielens", "triples")


@dataclass(frozen=True)
class ExperimentConfig:
    dataset_path: str = ""
    dataset_format: str = "movielens"
    dataset_name: str = ""
    rating_min: float = 1.0
    rating_max: float = 5.0
    toy: bool = False

    dim: int = 128
    init_scheme: str = "offset"

    learning_rate: float = 0.1
    weight_decay: float = 0.0005
    users_per_round: int = 256
    pretrain_rounds: int = 5
    total_rounds: int = 200
    recluster_every: int = 10
    eval_every: int = 5
    row_weighting: str = "contributors"
    item_scoring: str = "refined"

    clip_threshold: float = 0.2
    noise_scale: float = 0.1
    num_pseudo: int = 1000

    num_clusters: int = 10
    top_k: int = 200
    kmeans_max_iters: int = 100
    kmeans_tol: float = 1e-6
    use_neighbors: bool = True

    seed: int = 0
    split_seed: int = -1  # -1: same as seed
    output_dir: str = "runs/latest"
    threads: int = 1

    sweep_parameter: str = ""
    sweep_values: str = ""  # comma separated
    ablation_seeds: str = ""  # comma separated; empty -> just ``seed``

    # -- derived views -------------------------------------------------------
    def federation(self) -> FederationConfig:
        return FederationConfig(
            learning_rate=self.learning_rate,
            weight_decay=self.weight_decay,
            users_per_round=self.users_per_round,
            pretrain_rounds=self.pretrain_rounds,
            total_rounds=self.total_rounds,
            recluster_every=self.recluster_every,
            eval_every=self.eval_every,
            seed=self.seed,
            row_weighting=self.row_weighting,
            item_scoring=self.item_scoring,
            workers=self.threads,
            init_scheme=self.init_scheme,
        )

    def privacy(self) -> PrivacyConfig:
        return PrivacyConfig(self.clip_threshold, self.noise_scale, self.num_pseudo)

    def clustering(self) -> ClusterConfig:
        return ClusterConfig(self.num_clusters, self.top_k, self.kmeans_max_iters,
                             self.kmeans_tol, self.use_neighbors)

    @property
    def effective_split_seed(self) -> int:
        return self.seed if self.split_seed < 0 else self.split_seed

    def to_json(self) -> dict:
        return asdict(self)

    def validate(self, check_paths: bool = True) -> "ExperimentConfig":
        if self.dataset_format not in DATASET_FORMATS:
            raise ConfigError(f"dataset_format must be one of {DATASET_FORMATS}")
        if not self.toy:
            if not self.dataset_path:
                raise ConfigError("dataset_path is required (or use toy mode)")
            if check_paths and not Path(self.dataset_path).is_file():
                raise ConfigError(f"dataset_path {self.dataset_path!r} does not exist")
        if self.rating_min >= self.rating_max:
            raise ConfigError("rating_min must be below rating_max")
        if self.dim < 1:
            raise ConfigError("dim must be >= 1")
        if self.num_clusters < 1:
            raise ConfigError("num_clusters must be >= 1")
        if self.top_k < 0:
            raise ConfigError("top_k must be >= 0")
        if self.threads < 1:
            raise ConfigError("threads must be >= 1")
        try:
            self.federation()
            self.privacy()
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        return self


FIELD_TYPES = {f.name: f.type for f in fields(ExperimentConfig)}
_DEFAULTS = ExperimentConfig()


def _coerce(key: str, value):
    default = getattr(_DEFAULTS, key)
    if isinstance(default, bool):
        if isinstance(value, bool):
            return value
        s = str(value).strip().lower()
        if s in ("1", "true", "yes", "on"):
            return True
        if s in ("0", "false", "no", "off"):
            return False
        raise ConfigError(f"{key}: expected a boolean, got {value!r}")
    try:
        if isinstance(default, int):
            if isinstance(value, float) and not value.is_integer():
                raise ValueError
            return int(value)
        if isinstance(default, float):
            return float(value)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{key}: expected {type(default).__name__}, got {value!r}") from exc
    if isinstance(value, (list, tuple)):
        return ",".join(str(v) for v in value)
    return str(value)


def _parse_text(text: str) -> dict:
    text = text.strip()
    if not text:
        return {}
    if text.startswith("{"):
        return json.loads(text)
    out = {}
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        sep = ":" if ":" in line and ("=" not in line or line.index(":") < line.index("=")) else "="
        if sep not in line:
            raise ConfigError(f"line {lineno}: expected 'key: value' or 'key = value'")
        k, v = line.split(sep, 1)
        out[k.strip()] = v.strip().strip('"').strip("'")
    return out


def load_config(path=None, overrides: dict | None = None, check_paths: bool = True,
                base: dict | None = None) -> ExperimentConfig:
    """Resolve defaults < ``base`` < config file < ``overrides``.

    The file may be JSON or ``key: value`` lines.
    """
    doc = dict(base or {})
    if path:
        try:
            doc.update(_parse_text(Path(path).read_text()))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON: {exc}") from exc
    doc.update({k: v for k, v in (overrides or {}).items() if v is not None})
    unknown = sorted(set(doc) - set(FIELD_TYPES))
    if unknown:
        raise ConfigError(f"unknown config keys: {', '.join(unknown)}")
    cfg = replace(_DEFAULTS, **{k: _coerce(k, v) for k, v in doc.items()})
    return cfg.validate(check_paths)
