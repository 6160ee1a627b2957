"""Rating data ingestion, per-user splitting and client shards."""
from __future__ import annotations

import logging
import re
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import NamedTuple

import numpy as np

log = logging.getLogger(__name__)

# Published benchmark statistics: (users, items, ratings).
KNOWN_STATS = {
    "filmtrust": (1508, 2071, 35497),
    "ml-100k": (943, 1682, 100000),
    "douban": (3000, 3000, 136891),
}


class DatasetError(ValueError):
    """Malformed, empty or out-of-range rating data."""


class RatingTriple(NamedTuple):
    user_id: int
    item_id: int
    rating: float


@dataclass(frozen=True)
class Dataset:
    """Ratings in sparse triple form with dense 0-based ids.

    ``users``, ``items`` and ``ratings`` are aligned 1-d arrays. The raw id
    mappings are kept for reporting (``raw_user_ids[dense] == raw``).
    """

    num_users: int
    num_items: int
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray
    rating_range: tuple[float, float]
    raw_user_ids: np.ndarray | None = field(default=None, repr=False)
    raw_item_ids: np.ndarray | None = field(default=None, repr=False)
    name: str = ""

    def __len__(self) -> int:
        return int(self.users.shape[0])

    def __iter__(self):
        for u, i, r in zip(self.users.tolist(), self.items.tolist(), self.ratings.tolist()):
            yield RatingTriple(u, i, r)

    def take(self, index: np.ndarray) -> "Dataset":
        return replace(
            self,
            users=self.users[index],
            items=self.items[index],
            ratings=self.ratings[index],
        )

    def stats(self) -> dict:
        m, n, r = self.num_users, self.num_items, len(self)
        return {
            "name": self.name,
            "users": m,
            "items": n,
            "ratings": r,
            "sparsity": 1.0 - r / (m * n) if m and n else 1.0,
            "rating_range": list(self.rating_range),
        }


@dataclass(frozen=True)
class SplitDataset:
    train: Dataset
    validation: Dataset
    test: Dataset

    @property
    def num_users(self) -> int:
        return self.train.num_users

    @property
    def num_items(self) -> int:
        return self.train.num_items


@dataclass(frozen=True)
class UserShard:
    """One client's private training interactions."""

    user_id: int
    items: np.ndarray
    ratings: np.ndarray
    neighbor_ids: tuple[int, ...] = ()

    def __post_init__(self):
        if self.items.shape != self.ratings.shape:
            raise ValueError("items and ratings must be aligned")
        if self.user_id in self.neighbor_ids:
            raise ValueError(f"user {self.user_id} listed as its own neighbor")
        if len(set(self.neighbor_ids)) != len(self.neighbor_ids):
            raise ValueError("duplicate neighbor ids")

    @property
    def q(self) -> int:
        return int(self.items.shape[0])

    def with_neighbors(self, neighbor_ids) -> "UserShard":
        return replace(self, neighbor_ids=tuple(int(v) for v in neighbor_ids))


def _detect_separator(line: str) -> str | None:
    if "\t" in line:
        return "\t"
    if "," in line:
        return ","
    return None  # str.split() on runs of whitespace


def _read_triples(path: Path, sep: str | None):
    raw_u, raw_i, vals = [], [], []
    with open(path, "r", encoding="utf-8", errors="replace") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line or line.startswith("#"):
                continue
            if sep == "auto":
                sep = _detect_separator(line)
            parts = line.split(sep) if sep else line.split()
            if len(parts) < 3:
                raise DatasetError(f"{path}:{lineno}: expected at least 3 fields, got {len(parts)}")
            try:
                raw_u.append(parts[0].strip())
                raw_i.append(parts[1].strip())
                vals.append(float(parts[2]))
            except ValueError as exc:
                raise DatasetError(f"{path}:{lineno}: bad rating {parts[2]!r}") from exc
    if not vals:
        raise DatasetError(f"{path}: no ratings found")
    return raw_u, raw_i, np.asarray(vals, dtype=np.float64)


def _densify(raw: list[str]) -> tuple[np.ndarray, np.ndarray]:
    """Map raw ids to 0-based indices in order of numeric (or lexical) id."""
    uniq = sorted(set(raw), key=_id_sort_key)
    lookup = {r: k for k, r in enumerate(uniq)}
    dense = np.fromiter((lookup[r] for r in raw), dtype=np.int64, count=len(raw))
    return dense, np.asarray(uniq, dtype=object)


def _id_sort_key(raw: str):
    return (0, int(raw), "") if re.fullmatch(r"-?\d+", raw) else (1, 0, raw)


def _build(path, raw_u, raw_i, ratings, rating_range, name, duplicates):
    users, raw_users = _densify(raw_u)
    items, raw_items = _densify(raw_i)
    lo, hi = rating_range
    bad = np.flatnonzero((ratings < lo) | (ratings > hi))
    if bad.size:
        k = int(bad[0])
        raise DatasetError(
            f"{path}: rating {ratings[k]} on triple {k + 1} outside range [{lo}, {hi}]"
        )
    key = users * len(raw_items) + items
    _, first = np.unique(key, return_index=True)
    if first.size != key.size:
        n_dup = key.size - first.size
        if duplicates == "error":
            raise DatasetError(f"{path}: {n_dup} duplicate (user, item) pairs")
        # keep the last occurrence of each pair, preserving file order
        _, last_rev = np.unique(key[::-1], return_index=True)
        keep = np.sort(key.size - 1 - last_rev)
        log.warning("%s: dropped %d duplicate (user, item) pairs", path, n_dup)
        users, items, ratings = users[keep], items[keep], ratings[keep]
    return Dataset(
        num_users=len(raw_users),
        num_items=len(raw_items),
        users=users,
        items=items,
        ratings=ratings,
        rating_range=(float(lo), float(hi)),
        raw_user_ids=raw_users,
        raw_item_ids=raw_items,
        name=name,
    )


def load_movielens(path, name: str = "ml-100k") -> Dataset:
    """Read a MovieLens ``u.data`` file (user, item, rating, timestamp; tab separated)."""
    path = Path(path)
    raw_u, raw_i, ratings = _read_triples(path, "\t")
    return _build(path, raw_u, raw_i, ratings, (1.0, 5.0), name, "error")


def load_generic_triples(path, rating_range=(1.0, 5.0), name: str = "",
                         duplicates: str = "keep_last") -> Dataset:
    """Read ``user item rating`` lines separated by tab, comma or whitespace.

    The separator is detected from the first data line.
    """
    path = Path(path)
    raw_u, raw_i, ratings = _read_triples(path, "auto")
    return _build(path, raw_u, raw_i, ratings, rating_range, name or path.stem, duplicates)


def split(dataset: Dataset, seed: int, val_frac: float = 0.1, test_frac: float = 0.2) -> SplitDataset:
    """Per-user shuffled 70/10/20 split.

    For a user with q ratings, ``floor(val_frac*q)`` go to validation,
    ``floor(test_frac*q)`` to test and the rest to train. Users with fewer
    than three ratings keep everything in train.
    """
    rng = np.random.default_rng(seed)
    order = np.argsort(dataset.users, kind="stable")
    bounds = np.searchsorted(dataset.users[order], np.arange(dataset.num_users + 1))
    parts = {"train": [], "val": [], "test": []}
    for u in range(dataset.num_users):
        idx = order[bounds[u]:bounds[u + 1]]
        q = idx.size
        if q == 0:
            continue
        if q < 3:
            parts["train"].append(idx)
            continue
        idx = idx[rng.permutation(q)]
        n_val = int(np.floor(val_frac * q + 1e-9))
        n_test = int(np.floor(test_frac * q + 1e-9))
        parts["val"].append(idx[:n_val])
        parts["test"].append(idx[n_val:n_val + n_test])
        parts["train"].append(idx[n_val + n_test:])

    def gather(chunks):
        if not chunks:
            return dataset.take(np.empty(0, dtype=np.int64))
        return dataset.take(np.sort(np.concatenate(chunks)))

    return SplitDataset(gather(parts["train"]), gather(parts["val"]), gather(parts["test"]))


def make_shards(split_data: SplitDataset) -> list[UserShard]:
    """One shard per user owning at least one training triple, ordered by user id."""
    train = split_data.train
    order = np.argsort(train.users, kind="stable")
    bounds = np.searchsorted(train.users[order], np.arange(train.num_users + 1))
    shards = []
    for u in range(train.num_users):
        idx = order[bounds[u]:bounds[u + 1]]
        if idx.size:
            shards.append(UserShard(u, train.items[idx].copy(), train.ratings[idx].copy()))
    return shards


def check_known_stats(dataset: Dataset, key: str) -> dict:
    """Compare a dataset against the published (users, items, ratings) row."""
    expected = KNOWN_STATS[key]
    got = (dataset.num_users, dataset.num_items, len(dataset))
    return {
        "dataset": key,
        "expected": dict(zip(("users", "items", "ratings"), expected)),
        "observed": dict(zip(("users", "items", "ratings"), got)),
        "pass": got == expected,
    }


def synthetic_dataset(num_users: int = 50, num_items: int = 80, dim: int = 4,
                      density: float = 0.3, seed: int = 0) -> Dataset:
    """Small low-rank rating set on the 1-5 scale, used for smoke runs."""
    rng = np.random.default_rng(seed)
    # a few user taste groups so that clustering has something to find
    groups = rng.integers(0, 3, size=num_users)
    centers = rng.normal(size=(3, dim))
    pu = centers[groups] + 0.3 * rng.normal(size=(num_users, dim))
    qi = rng.normal(size=(num_items, dim))
    scores = pu @ qi.T / np.sqrt(dim)
    mask = rng.random((num_users, num_items)) < density
    # guarantee every user and item at least one rating
    mask[np.arange(num_users), rng.integers(0, num_items, num_users)] = True
    mask[rng.integers(0, num_users, num_items), np.arange(num_items)] = True
    u, i = np.nonzero(mask)
    r = np.clip(np.rint(3.0 + 1.2 * scores[u, i]), 1, 5)
    return Dataset(num_users, num_items, u.astype(np.int64), i.astype(np.int64),
                   r.astype(np.float64), (1.0, 5.0), name="toy")
