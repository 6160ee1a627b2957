import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from clusterfed.datasets import (Dataset, DatasetError, UserShard, load_generic_triples, load_movielens,
                             make_shards, split, synthetic_dataset)


def _write(tmp_path, text, name="u.data"):
    p = tmp_path / name
    p.write_text(text)
    return p


def test_single_line_movielens(tmp_path):
    ds = load_movielens(_write(tmp_path, "1\t1\t5\t0\n"))
    assert (ds.num_users, ds.num_items, len(ds)) == (1, 1, 1)
    assert list(ds)[0].rating == 5.0
    assert ds.rating_range == (1.0, 5.0)


def test_short_line_reports_line_number(tmp_path):
    with pytest.raises(DatasetError, match=":1:"):
        load_movielens(_write(tmp_path, "1\t1\n"))
    with pytest.raises(DatasetError, match=":3:"):
        load_movielens(_write(tmp_path, "1\t1\t5\t0\n2\t1\t3\t0\n2\t2\n"))


def test_empty_file(tmp_path):
    with pytest.raises(DatasetError, match="no ratings"):
        load_movielens(_write(tmp_path, ""))


def test_ids_remapped_dense_and_order_stable(tmp_path):
    ds = load_movielens(_write(tmp_path, "10\t7\t4\t0\n3\t7\t2\t0\n10\t2\t1\t0\n"))
    assert ds.users.tolist() == [1, 0, 1]
    assert ds.items.tolist() == [1, 1, 0]
    assert list(ds.raw_user_ids) == ["3", "10"]
    # file order preserved
    assert ds.ratings.tolist() == [4.0, 2.0, 1.0]


@pytest.mark.parametrize("sep", ["\t", ",", " ", "   "])
def test_generic_separators(tmp_path, sep):
    text = "\n".join(sep.join(r) for r in [("1", "1", "2.5"), ("1", "2", "3"), ("2", "2", "0.5")])
    ds = load_generic_triples(_write(tmp_path, text, "r.txt"), (0.5, 4.0))
    assert (ds.num_users, ds.num_items, len(ds)) == (2, 2, 3)


def test_generic_rating_out_of_range(tmp_path):
    with pytest.raises(DatasetError, match="outside range"):
        load_generic_triples(_write(tmp_path, "1 1 9.0\n", "r.txt"), (1, 5))


def test_movielens_rejects_duplicates(tmp_path):
    with pytest.raises(DatasetError, match="duplicate"):
        load_movielens(_write(tmp_path, "1\t1\t5\t0\n1\t1\t4\t1\n"))


def test_generic_keeps_last_duplicate(tmp_path):
    ds = load_generic_triples(_write(tmp_path, "1 1 2\n1 2 3\n1 1 4\n", "r.txt"), (1, 5))
    assert len(ds) == 2
    assert sorted(zip(ds.items.tolist(), ds.ratings.tolist())) == [(0, 4.0), (1, 3.0)]


def _per_user_counts(d):
    return np.bincount(d.users, minlength=d.num_users)


def test_split_partition_and_rounding():
    ds = synthetic_dataset(num_users=40, num_items=60, density=0.4, seed=3)
    sp = split(ds, seed=1)
    n = len(sp.train) + len(sp.validation) + len(sp.test)
    assert n == len(ds)
    keys = [set(zip(part.users.tolist(), part.items.tolist())) for part in (sp.train, sp.validation, sp.test)]
    assert not (keys[0] & keys[1]) and not (keys[0] & keys[2]) and not (keys[1] & keys[2])
    q = _per_user_counts(ds)
    assert np.array_equal(_per_user_counts(sp.validation), np.floor(0.1 * q + 1e-9).astype(int))
    assert np.array_equal(_per_user_counts(sp.test), np.floor(0.2 * q + 1e-9).astype(int))


def test_split_small_users_keep_everything_in_train():
    ds = Dataset(2, 3, np.array([0, 1, 1]), np.array([0, 1, 2]), np.array([3.0, 4.0, 5.0]), (1, 5))
    sp = split(ds, 0)
    assert len(sp.train) == 3 and len(sp.validation) == 0 and len(sp.test) == 0


def test_split_deterministic():
    ds = synthetic_dataset(seed=2)
    a, b = split(ds, 5), split(ds, 5)
    assert np.array_equal(a.test.items, b.test.items) and np.array_equal(a.test.users, b.test.users)
    c = split(ds, 6)
    assert not np.array_equal(a.test.items, c.test.items)


@settings(max_examples=40, deadline=None)
@given(st.lists(st.integers(1, 40), min_size=1, max_size=12), st.integers(0, 2**31 - 1))
def test_split_partition_property(counts, seed):
    users = np.repeat(np.arange(len(counts)), counts)
    items = np.concatenate([np.arange(c) for c in counts])
    ds = Dataset(len(counts), max(counts), users, items, np.ones(users.size), (1, 5))
    sp = split(ds, seed)
    assert len(sp.train) + len(sp.validation) + len(sp.test) == len(ds)
    q = np.asarray(counts)
    expect_train = np.where(q < 3, q, q - np.floor(0.1 * q + 1e-9) - np.floor(0.2 * q + 1e-9))
    assert np.array_equal(_per_user_counts(sp.train), expect_train)


def test_make_shards():
    ds = Dataset(2, 8, np.array([0, 0, 1]), np.array([3, 7, 1]), np.array([4.0, 2.0, 5.0]), (1, 5))
    sp = split(ds, 0)
    shards = make_shards(sp)
    assert [s.user_id for s in shards] == [0, 1]
    assert shards[0].items.tolist() == [3, 7] and shards[0].ratings.tolist() == [4.0, 2.0]
    assert all(s.neighbor_ids == () for s in shards)
    assert all(s.items.shape == s.ratings.shape for s in shards)


def test_shard_rejects_self_and_duplicate_neighbors():
    s = UserShard(1, np.array([0]), np.array([3.0]))
    with pytest.raises(ValueError):
        s.with_neighbors([1, 2])
    with pytest.raises(ValueError):
        s.with_neighbors([2, 2])
    assert s.with_neighbors([3, 2]).neighbor_ids == (3, 2)


def test_stats_json():
    ds = Dataset(943, 1682, np.zeros(1, int), np.zeros(1, int), np.ones(1), (1, 5), name="x")
    st_ = ds.stats()
    assert st_["users"] == 943 and st_["items"] == 1682 and st_["ratings"] == 1
