# --------------------------------------------------------------
# Файлове с матрици:
#  - плътен формат: 16-байтов header (magic, rows, cols като uint32 LE)
#    + row-major float64 little-endian; четенето е през np.memmap
#  - разреден формат: Matrix Market coordinate real general (scipy.io)
#  - генератори, детерминирани по seed
#  - U.bin / V.bin / sigma.txt за изхода на decompose
# --------------------------------------------------------------

import logging
import struct
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from ..errors import ConfigError
from .linalg import CsrMatrix, is_sparse

log = logging.getLogger(__name__)

DENSE_MAGIC = b"OOMSVD\x00\x01"
HEADER = struct.Struct("<8sII")
INT32_MAX = np.iinfo(np.int32).max


def write_dense(path, a):
    a = np.ascontiguousarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ConfigError(f"dense files hold 2-D matrices, got ndim={a.ndim}")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    rows, cols = a.shape
    with open(path, "wb") as f:
        f.write(HEADER.pack(DENSE_MAGIC, rows, cols))
        f.write(a.astype("<f8", copy=False).tobytes(order="C"))
    log.debug("wrote dense %d×%d → %s", rows, cols, path)
    return path


def read_dense(path, mmap=True):
    """Връща np.memmap (само за четене) или масив в паметта."""
    path = Path(path)
    with open(path, "rb") as f:
        head = f.read(HEADER.size)
    if len(head) < HEADER.size:
        raise ConfigError(f"{path}: file too short for a dense header")
    magic, rows, cols = HEADER.unpack(head)
    if magic != DENSE_MAGIC:
        raise ConfigError(f"{path}: not a dense matrix file (bad magic)")
    expected = HEADER.size + rows * cols * 8
    if path.stat().st_size != expected:
        raise ConfigError(f"{path}: payload size does not match {rows}×{cols}")
    if mmap and rows * cols:
        return np.memmap(path, dtype="<f8", mode="r", offset=HEADER.size, shape=(rows, cols))
    return np.fromfile(path, dtype="<f8", offset=HEADER.size).reshape(rows, cols)


def write_sparse(path, a):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    m = a.scipy if is_sparse(a) else sp.csr_matrix(a)
    scipy.io.mmwrite(str(path), sp.coo_matrix(m), field="real", symmetry="general")
    log.debug("wrote sparse %d×%d (nnz=%d) → %s", m.shape[0], m.shape[1], m.nnz, path)
    return path


def read_sparse(path):
    try:
        m = scipy.io.mmread(str(path))
    except Exception as exc:
        raise ConfigError(f"{path}: cannot parse Matrix Market file: {exc}") from exc
    if not sp.issparse(m):
        m = sp.csr_matrix(m)
    return CsrMatrix.from_scipy(m.tocsr())


def read_matrix(path, mmap=True):
    path = Path(path)
    if not path.exists():
        raise ConfigError(f"input file {path} does not exist")
    if path.suffix == ".mtx":
        return read_sparse(path)
    return read_dense(path, mmap=mmap)


def generate_dense(m, n, seed):
    if m < 1 or n < 1:
        raise ConfigError(f"invalid shape {m}×{n}")
    return np.random.default_rng(seed).standard_normal((m, n))


def generate_sparse(m, n, density, seed):
    """nnz = round(density·m·n) позиции без повторение, стойности в (0, 1]."""
    if m < 1 or n < 1:
        raise ConfigError(f"invalid shape {m}×{n}")
    if not 0 < density <= 1:
        raise ConfigError(f"density must be in (0, 1], got {density}")
    nnz = int(round(density * m * n))
    if nnz > INT32_MAX or m > INT32_MAX or n > INT32_MAX:
        raise ConfigError(f"{nnz} nonzeros overflow the 32-bit index type")
    rng = np.random.default_rng(seed)
    flat = rng.choice(m * n, size=nnz, replace=False)
    values = 1.0 - rng.random(nnz)
    rows, cols = np.divmod(flat, n)
    return CsrMatrix.from_scipy(sp.coo_matrix((values, (rows, cols)), shape=(m, n)).tocsr())


def write_matrix(path, a):
    if is_sparse(a):
        return write_sparse(path, a)
    return write_dense(path, a)


def write_factors(out_dir, factors):
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    paths = {
        "U": write_dense(out_dir / "U.bin", factors.U),
        "V": write_dense(out_dir / "V.bin", factors.V),
        "sigma": out_dir / "sigma.txt",
    }
    with open(paths["sigma"], "w", encoding="utf-8") as f:
        for s in factors.sigma:
            f.write(f"{s:.17g}\n")
    return paths


def read_sigma(path):
    with open(path, encoding="utf-8") as f:
        return np.array([float(line) for line in f if line.strip()])
