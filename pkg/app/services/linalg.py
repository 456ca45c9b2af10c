# --------------------------------------------------------------
# Ядро от линейна алгебра, ползвано от всички останали модули:
#  - плътни матрици/вектори → np.ndarray (float64, row-major)
#  - CsrMatrix → валидиран CSR, смята през scipy.sparse
#  - matvec / matvec_transposed / matmul / norm2 / normalize
#  - SvdFactors (U, σ, V) и frobenius_error за проверка на реконструкция
#
# Всички функции са чисти → безопасни за паралелни rank-ове/задачи.
# Blocking/tiling НЯМА тук, то живее в gram.py.
# --------------------------------------------------------------

import logging
from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp

from ..errors import ShapeError, DegenerateInputError

log = logging.getLogger(__name__)

# колко елемента максимум материализираме наведнъж във frobenius_error
FROBENIUS_BLOCK_ELEMENTS = 1 << 20


def as_dense(a, name="matrix"):
    """Връща 2D float64 C-contiguous масив; rows ≥ 1, cols ≥ 1."""
    arr = np.ascontiguousarray(a, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeError(f"{name}: expected 2-D array, got ndim={arr.ndim}")
    if arr.shape[0] < 1 or arr.shape[1] < 1:
        raise ShapeError(f"{name}: empty shape {arr.shape}")
    return arr


def as_vector(v, name="vector"):
    arr = np.ascontiguousarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeError(f"{name}: expected 1-D array, got ndim={arr.ndim}")
    return arr


@dataclass(frozen=True, eq=False)
class CsrMatrix:
    """
    Compressed Sparse Row матрица.

    Инварианти (проверяват се в __post_init__):
      - row_ptr[0] = 0, row_ptr не намалява, row_ptr[rows] = nnz = len(values)
      - col_idx в [0, cols) и строго растящи във всеки ред (без дубликати)
    """

    rows: int
    cols: int
    row_ptr: np.ndarray
    col_idx: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "row_ptr", np.ascontiguousarray(self.row_ptr, dtype=np.int64))
        object.__setattr__(self, "col_idx", np.ascontiguousarray(self.col_idx, dtype=np.int64))
        object.__setattr__(self, "values", np.ascontiguousarray(self.values, dtype=np.float64))

        if self.rows < 1 or self.cols < 1:
            raise ShapeError(f"CSR: empty shape ({self.rows}, {self.cols})")
        rp, ci = self.row_ptr, self.col_idx
        if rp.shape != (self.rows + 1,):
            raise ShapeError(f"CSR: row_ptr length {rp.size} != rows+1 ({self.rows + 1})")
        if rp[0] != 0 or np.any(np.diff(rp) < 0):
            raise ShapeError("CSR: row_ptr must start at 0 and be non-decreasing")
        if rp[-1] != ci.size or ci.size != self.values.size:
            raise ShapeError("CSR: row_ptr[rows], len(col_idx) and len(values) disagree")
        if ci.size:
            if ci.min() < 0 or ci.max() >= self.cols:
                raise ShapeError("CSR: column index out of range")
            # строго растящи в реда: разлика > 0 навсякъде освен на границите на редовете
            inner = np.ones(ci.size, dtype=bool)
            inner[rp[:-1][rp[:-1] < ci.size]] = False
            steps = np.diff(ci)
            if np.any(steps[inner[1:]] <= 0):
                raise ShapeError("CSR: column indices must be strictly increasing within a row")

    @classmethod
    def from_scipy(cls, m):
        m = sp.csr_matrix(m, dtype=np.float64)
        m.sum_duplicates()
        m.sort_indices()
        return cls(m.shape[0], m.shape[1], m.indptr, m.indices, m.data)

    @classmethod
    def from_dense(cls, a):
        return cls.from_scipy(sp.csr_matrix(as_dense(a)))

    @cached_property
    def scipy(self):
        """scipy изглед над същите буфери (без копие)."""
        return sp.csr_matrix((self.values, self.col_idx, self.row_ptr), shape=self.shape, copy=False)

    @property
    def shape(self):
        return (self.rows, self.cols)

    @property
    def nnz(self):
        return int(self.values.size)

    @property
    def nbytes(self):
        return int(self.row_ptr.nbytes + self.col_idx.nbytes + self.values.nbytes)

    def copy(self):
        return CsrMatrix(self.rows, self.cols, self.row_ptr.copy(), self.col_idx.copy(), self.values.copy())

    def todense(self):
        return self.scipy.toarray()

    def row_slab(self, r0, r1):
        """Редове [r0, r1) → нов CsrMatrix (само аритметика върху row_ptr)."""
        lo, hi = self.row_ptr[r0], self.row_ptr[r1]
        return CsrMatrix(r1 - r0, self.cols, self.row_ptr[r0:r1 + 1] - lo,
                         self.col_idx[lo:hi], self.values[lo:hi])

    def col_slab(self, c0, c1):
        """Колони [c0, c1) → нов CsrMatrix."""
        return CsrMatrix.from_scipy(self.scipy[:, c0:c1])

    def transpose(self):
        return CsrMatrix.from_scipy(self.scipy.T.tocsr())


def is_sparse(m):
    return isinstance(m, CsrMatrix)


def shape_of(m):
    return m.shape


def matvec(m, v):
    """result[i] = Σ_j M[i,j]·v[j]."""
    v = as_vector(v)
    if m.shape[1] != v.size:
        raise ShapeError(f"matvec: {m.shape} @ ({v.size},)")
    if is_sparse(m):
        return np.asarray(m.scipy @ v, dtype=np.float64)
    return m @ v


def matvec_transposed(m, v):
    """Mᵀv без да материализираме Mᵀ (scipy .T е CSC изглед, numpy .T е view)."""
    v = as_vector(v)
    if m.shape[0] != v.size:
        raise ShapeError(f"matvec_transposed: {m.shape}ᵀ @ ({v.size},)")
    if is_sparse(m):
        return np.asarray(m.scipy.T @ v, dtype=np.float64)
    return m.T @ v


def matmul(a, b):
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul: {a.shape} @ {b.shape}")
    return np.asarray(a, dtype=np.float64) @ np.asarray(b, dtype=np.float64)


def norm2(v):
    return float(np.linalg.norm(as_vector(v)))


def normalize(v):
    v = as_vector(v)
    n = norm2(v)
    if n == 0.0:
        raise DegenerateInputError("cannot normalize a zero vector")
    return v / n


@dataclass
class SvdFactors:
    """U (m×k), sigma (k), V (n×k)."""

    U: np.ndarray
    sigma: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        self.U = np.asarray(self.U, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64).reshape(-1)
        self.V = np.asarray(self.V, dtype=np.float64)
        k = self.sigma.size
        if self.U.ndim != 2 or self.V.ndim != 2 or self.U.shape[1] != k or self.V.shape[1] != k:
            raise ShapeError(f"SvdFactors: U{self.U.shape}, sigma({k},), V{self.V.shape}")
        if np.any(self.sigma < 0):
            raise ShapeError("SvdFactors: negative singular value")
        if k > 1 and np.any(np.diff(self.sigma) > 1e-9 * self.sigma[0]):
            # power method върху неконвергирали компоненти може да наруши реда
            log.warning("SvdFactors: sigma not non-increasing: %s", self.sigma)

    @property
    def k(self):
        return int(self.sigma.size)

    @classmethod
    def empty(cls, m, n):
        return cls(np.zeros((m, 0)), np.zeros(0), np.zeros((n, 0)))

    def truncated(self, k):
        return SvdFactors(self.U[:, :k], self.sigma[:k], self.V[:, :k])


def frobenius_error(a, factors):
    """
    ‖A − U·diag(σ)·Vᵀ‖_F, изчислено по блокове от редове.
    Плътното произведение никога не се материализира изцяло.
    """
    m, n = a.shape
    if factors.U.shape[0] != m or factors.V.shape[0] != n:
        raise ShapeError(f"frobenius_error: A{a.shape} vs U{factors.U.shape}, V{factors.V.shape}")
    us = factors.U * factors.sigma
    step = max(1, FROBENIUS_BLOCK_ELEMENTS // n)
    total = 0.0
    for r0 in range(0, m, step):
        r1 = min(m, r0 + step)
        block = a.row_slab(r0, r1).todense() if is_sparse(a) else np.asarray(a[r0:r1], dtype=np.float64)
        block = block - us[r0:r1] @ factors.V.T
        total += float(np.sum(block * block))
    return float(np.sqrt(total))
