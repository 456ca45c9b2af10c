# tests/test_linalg.py
import logging

import numpy as np
import pytest
import scipy.sparse as sp

from app.errors import ShapeError, DegenerateInputError
from app.services.linalg import (CsrMatrix, SvdFactors, matvec, matvec_transposed, matmul,
                                 norm2, normalize, frobenius_error)

log = logging.getLogger(__name__)


def test_matvec_examples():
    log.info("Проверка: matvec за identity, 2×2 и CSR diag(2,0,5)")
    assert np.array_equal(matvec(np.eye(3), [1, 2, 3]), [1, 2, 3])
    assert np.array_equal(matvec(np.array([[1.0, 2], [3, 4]]), [1, 1]), [3, 7])
    d = CsrMatrix.from_dense(np.diag([2.0, 0.0, 5.0]))
    assert d.nnz == 2
    assert np.array_equal(matvec(d, [1, 1, 1]), [2, 0, 5])
    log.info("ОК: резултатите съвпадат с ръчното разгъване")


def test_matvec_transposed_examples():
    assert np.array_equal(matvec_transposed(np.eye(3), [1, 2, 3]), [1, 2, 3])
    assert np.array_equal(matvec_transposed(np.array([[1.0, 2], [3, 4]]), [1, 1]), [4, 6])
    assert np.array_equal(matvec_transposed(np.array([[1.0, 2, 3]]), [2]), [2, 4, 6])


def test_shape_mismatch_raises():
    with pytest.raises(ShapeError):
        matvec(np.eye(3), [1, 2])
    with pytest.raises(ShapeError):
        matvec_transposed(np.eye(3), [1, 2])
    with pytest.raises(ShapeError):
        matmul(np.eye(2), np.eye(3))


def test_matvec_transposed_equals_explicit_transpose(rng):
    log.info("Проверка: Mᵀv без транспониране == matvec(Mᵀ, v) за случайни M до 64×64")
    for _ in range(10):
        m, n = rng.integers(1, 65, size=2)
        a = rng.standard_normal((m, n))
        v = rng.standard_normal(m)
        assert np.allclose(matvec_transposed(a, v), matvec(np.ascontiguousarray(a.T), v), atol=1e-12)
        csr = CsrMatrix.from_dense(a)
        assert np.allclose(matvec_transposed(csr, v), a.T @ v, atol=1e-12)


@pytest.mark.parametrize("density", [0.01, 0.1, 0.5])
def test_csr_matvec_equals_dense(rng, density):
    m = sp.random(40, 30, density=density, random_state=7, format="csr")
    csr = CsrMatrix.from_scipy(m)
    dense = m.toarray()
    v = rng.standard_normal(30)
    assert np.allclose(matvec(csr, v), dense @ v, atol=1e-12)
    assert np.allclose(csr.todense(), dense)


def test_matmul_examples(rng):
    a = np.array([[1.0, 2], [3, 4]])
    assert np.array_equal(matmul(np.eye(2), np.eye(2)), np.eye(2))
    assert np.array_equal(matmul(a.T, a), [[10, 14], [14, 20]])
    assert np.array_equal(matmul(a, np.zeros((2, 3))), np.zeros((2, 3)))
    x, y, z = rng.standard_normal((4, 5)), rng.standard_normal((5, 3)), rng.standard_normal((3, 6))
    left, right = matmul(matmul(x, y), z), matmul(x, matmul(y, z))
    assert np.allclose(left, right, atol=1e-9 * max(1.0, np.abs(left).max()))


def test_norm_and_normalize():
    assert norm2([3, 4]) == 5.0
    assert np.allclose(normalize([3, 4]), [0.6, 0.8])
    assert np.array_equal(normalize([1, 0, 0]), [1, 0, 0])
    assert abs(norm2(normalize([1e-3, 7, -2])) - 1.0) < 1e-12
    with pytest.raises(DegenerateInputError):
        normalize([0, 0])


def test_csr_invariants_rejected():
    log.info("Проверка: невалиден CSR (row_ptr, индекси, дубликати) → ShapeError")
    with pytest.raises(ShapeError):
        CsrMatrix(2, 2, [1, 1, 2], [0, 1], [1.0, 2.0])
    with pytest.raises(ShapeError):
        CsrMatrix(2, 2, [0, 2, 1], [0, 1], [1.0, 2.0])
    with pytest.raises(ShapeError):
        CsrMatrix(1, 2, [0, 1], [2], [1.0])
    with pytest.raises(ShapeError):
        CsrMatrix(1, 3, [0, 2], [1, 1], [1.0, 2.0])
    with pytest.raises(ShapeError):
        CsrMatrix(1, 3, [0, 2], [2, 0], [1.0, 2.0])
    ok = CsrMatrix(2, 3, [0, 2, 3], [0, 2, 1], [1.0, 2.0, 3.0])
    assert ok.shape == (2, 3) and ok.nnz == 3
    log.info("ОК: всички невалидни варианти отхвърлени, валидният приет")


def test_csr_slabs_and_transpose(rng):
    a = sp.random(12, 9, density=0.3, random_state=3, format="csr").toarray()
    csr = CsrMatrix.from_dense(a)
    assert np.array_equal(csr.row_slab(3, 7).todense(), a[3:7])
    assert np.array_equal(csr.col_slab(2, 5).todense(), a[:, 2:5])
    assert np.array_equal(csr.transpose().todense(), a.T)


def test_frobenius_error_examples():
    a = np.diag([3.0, 2.0, 1.0])
    full = SvdFactors(np.eye(3), [3, 2, 1], np.eye(3))
    assert frobenius_error(a, full) < 1e-9
    assert abs(frobenius_error(a, SvdFactors.empty(3, 3)) - np.sqrt(14.0)) < 1e-12
    assert abs(frobenius_error(a, full.truncated(1)) - np.sqrt(5.0)) < 1e-12
    assert abs(frobenius_error(CsrMatrix.from_dense(a), full.truncated(1)) - np.sqrt(5.0)) < 1e-12


def test_svd_factors_validation():
    with pytest.raises(ShapeError):
        SvdFactors(np.eye(3), [1, 2], np.eye(3)[:, :2])
    with pytest.raises(ShapeError):
        SvdFactors(np.eye(2), [1, -1], np.eye(2))
    f = SvdFactors(np.eye(3), [3, 2, 1], np.eye(3))
    assert f.k == 3 and f.truncated(2).k == 2
