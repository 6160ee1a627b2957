import numpy as np
import pytest

from clusterfed import _accel, kernels

pytestmark = pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not available")


def test_scatter_add_agrees():
    rng = np.random.default_rng(0)
    ids = rng.integers(0, 20, size=300)
    rows, w = rng.normal(size=(300, 5)), rng.uniform(size=300)
    a, b = np.zeros((20, 5)), np.zeros((20, 5))
    kernels._scatter_add_rows_loop(a, ids, rows, w)
    kernels.scatter_add_rows_numpy(b, ids, rows, w)
    np.testing.assert_allclose(a, b, rtol=1e-12, atol=1e-13)


def test_nearest_centroid_agrees():
    rng = np.random.default_rng(1)
    X, C = rng.normal(size=(500, 6)), rng.normal(size=(7, 6))
    la, da = kernels._nearest_centroid_loop(X, C)
    lb, db = kernels.nearest_centroid_numpy(X, C)
    assert np.array_equal(la, lb)
    np.testing.assert_allclose(da, db, rtol=1e-12)


def test_topk_agrees_including_ties():
    rng = np.random.default_rng(2)
    S = np.round(rng.uniform(size=(40, 40)), 1)
    S = (S + S.T) / 2
    for k in (1, 5, 39, 60):
        assert np.array_equal(kernels._topk_rows_loop(S, k), kernels.topk_rows_numpy(S, k))


def test_topk_excludes_diagonal():
    S = np.eye(4) * 10
    out = kernels.topk_rows_numpy(S, 3)
    assert all(i not in out[i] for i in range(4))
    assert out[0].tolist() == [1, 2, 3]


def test_dispatch_uses_compiled_kernels_and_agrees():
    rng = np.random.default_rng(3)
    X, C = rng.normal(size=(50, 3)), rng.normal(size=(4, 3))
    la, _ = kernels.nearest_centroid(X, C)
    lb, _ = kernels.nearest_centroid_numpy(X, C)
    assert np.array_equal(la, lb)
    assert hasattr(kernels.topk_rows, "py_func")
    S = rng.uniform(size=(10, 10))
    assert np.array_equal(kernels.topk_rows(S, 4), kernels.topk_rows_numpy(S, 4))
    ids, rows, w = rng.integers(0, 5, size=30), rng.normal(size=(30, 3)), rng.uniform(size=30)
    np.testing.assert_allclose(kernels.scatter_add_rows(np.zeros((5, 3)), ids, rows, w),
                               kernels.scatter_add_rows_numpy(np.zeros((5, 3)), ids, rows, w), rtol=1e-12)
