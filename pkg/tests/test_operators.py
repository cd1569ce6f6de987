import numpy as np
import pytest

from lgtlab.operators import SparseOperator, OperatorAccumulator, linear_combination


def test_entries_canonicalize_and_sum():
    # lower-triangle input is conjugated into the upper triangle; duplicates sum
    op = SparseOperator.from_entries(
        3, rows=[1, 0, 2, 2], cols=[0, 1, 1, 1], vals=[1 + 2j, 1 - 2j, 0.5j, 0.5j])
    dense = op.dense()
    assert dense[0, 1] == 2 - 4j
    assert dense[1, 0] == 2 + 4j
    assert dense[1, 2] == pytest.approx(-1j)
    assert op.hermiticity_defect() == 0.0


def test_duplicate_rejection_and_diag_reality():
    with pytest.raises(ValueError):
        SparseOperator(2, [0, 0], [1, 1], [1.0, 2.0])
    with pytest.raises(ValueError):
        SparseOperator(2, [0], [0], [1.0 + 1e-3j])


def test_dump_load_roundtrip(tmp_path):
    rng = np.random.default_rng(0)
    acc = OperatorAccumulator(6)
    acc.add([0, 1, 2], [3, 4, 5], rng.normal(size=3) + 1j * rng.normal(size=3))
    acc.add_diagonal(rng.normal(size=6))
    op = acc.finalize()
    path = tmp_path / "op.txt"
    op.dump(path)
    back = SparseOperator.load(path)
    assert np.abs(op.dense() - back.dense()).max() < 1e-15


def test_diagonal_helpers():
    op = SparseOperator.diagonal(np.array([1.0, -2.0, 0.0]))
    assert op.is_diagonal()
    assert np.allclose(op.diag(), [1.0, -2.0, 0.0])


def test_linear_combination_matches_add():
    rng = np.random.default_rng(1)
    a = SparseOperator.from_entries(4, [0, 1], [2, 3], rng.normal(size=2))
    b = SparseOperator.from_entries(4, [0, 0], [0, 2], rng.normal(size=2))
    lc = linear_combination([(2.0, a), (-0.5, b)])
    ref = a.scaled(2.0) + b.scaled(-0.5)
    assert np.abs(lc.dense() - ref.dense()).max() < 1e-14


def test_matvec_matches_dense():
    rng = np.random.default_rng(2)
    acc = OperatorAccumulator(8)
    rows = rng.integers(0, 8, 20)
    cols = rng.integers(0, 8, 20)
    off = rows != cols
    acc.add(rows[off], cols[off],
            rng.normal(size=off.sum()) + 1j * rng.normal(size=off.sum()))
    acc.add_diagonal(rng.normal(size=8))
    op = acc.finalize()
    v = rng.normal(size=8) + 1j * rng.normal(size=8)
    assert np.allclose(op.matvec(v), op.dense() @ v)
