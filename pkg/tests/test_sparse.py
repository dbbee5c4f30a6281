import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from metselect.sparse import ShapeError, SparseCSR


def random_csr(rng, rows, cols, density=0.3):
    dense = rng.normal(size=(rows, cols)) * (rng.random((rows, cols)) < density)
    r, c = np.nonzero(dense)
    return SparseCSR.from_coo(rows, cols, r, c, dense[r, c]), dense


def test_dot_matches_dense():
    rng = np.random.default_rng(0)
    m, dense = random_csr(rng, 7, 5)
    x = rng.normal(size=(5, 3))
    np.testing.assert_allclose(m.dot(x), dense @ x, atol=1e-12)


@settings(max_examples=40, deadline=None)
@given(st.integers(1, 9), st.integers(1, 9), st.integers(0, 2**31 - 1))
def test_transpose_is_involution(rows, cols, seed):
    m, dense = random_csr(np.random.default_rng(seed), rows, cols)
    np.testing.assert_array_equal(m.transpose().to_dense(), dense.T)
    np.testing.assert_array_equal(m.transpose().transpose().to_dense(), dense)


def test_identity_and_row_sums():
    eye = SparseCSR.identity(4)
    np.testing.assert_array_equal(eye.to_dense(), np.eye(4))
    np.testing.assert_array_equal(eye.row_sums(), np.ones(4))


def test_shape_mismatch():
    with pytest.raises(ShapeError):
        SparseCSR.identity(3).dot(np.ones((4, 2)))


def test_rejects_unsorted_columns():
    with pytest.raises(ValueError, match="strictly increasing"):
        SparseCSR(2, 3, [0, 2, 2], [2, 0], [1.0, 1.0])


def test_rejects_out_of_range_column():
    with pytest.raises(ValueError):
        SparseCSR(1, 2, [0, 1], [5], [1.0])


def test_from_coo_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        SparseCSR.from_coo(2, 2, [0, 0], [1, 1], [1.0, 2.0])
