# --------------------------------------------------------------
# Truncated SVD чрез степенния метод с дефлация.
#
# Rank-овете работят върху работен операнд W с m_w ≥ n_w:
#   row ос    → W = A,  търсим V (дясна страна), U = A·v / σ
#   column ос → W = Aᵀ, търсим U на A; накрая U и V се разменят
#
# Два пътя:
#   dense-gram    → явен residual X = A − UΣVᵀ (блоково през store),
#                   Gram B = XᵀX веднъж на компонент, после Bv в итерациите
#   residual-free → Bv0 по четиричленното разлагане, само matvec-ове
#                   (A никога не става плътна, n×n/m×n буфери няма)
#
# Всички rank-ове изпълняват едни и същи итерации: v0 е от общ seed,
# а резултатите от колективите са еднакви навсякъде.
# --------------------------------------------------------------

import logging
import math
import time
from dataclasses import dataclass, field, asdict
from typing import Optional

import numpy as np

from ..errors import ConfigError, ShapeError, DegenerateInputError, NumericError
from .gram import dist_gram, gram_matvec
from .linalg import SvdFactors, is_sparse, matvec, matvec_transposed, normalize, norm2
from .partition import split_even
from .task_queue import TaskQueue
from .tiered_store import BlockId, HostPool

log = logging.getLogger(__name__)

PATHS = ("dense-gram", "residual-free", "auto")

# σ_l под RANK_TOL·max(1, σ_1) → рангът е изчерпан
RANK_TOL = 1e-12


@dataclass(frozen=True)
class SvdConfig:
    k: int = -1
    eps: float = 1e-10
    max_iter: int = 10_000
    seed: int = 0
    path: str = "auto"
    # benchmark режим: точно толкова итерации, без ранен изход
    fixed_iters: Optional[int] = None

    def __post_init__(self):
        if not 0 < self.eps < 1:
            raise ConfigError(f"eps must be in (0, 1), got {self.eps}")
        if self.max_iter < 1:
            raise ConfigError(f"max_iter must be ≥ 1, got {self.max_iter}")
        if self.path not in PATHS:
            raise ConfigError(f"unknown path {self.path!r}; expected one of {PATHS}")
        if self.fixed_iters is not None and self.fixed_iters < 1:
            raise ConfigError(f"fixed_iters must be ≥ 1, got {self.fixed_iters}")
        if self.k == 0 or self.k < -1:
            raise ConfigError(f"k must be -1 or ≥ 1, got {self.k}")

    def resolve_k(self, m, n):
        limit = min(m, n)
        if self.k == -1:
            return limit
        if self.k > limit:
            raise ConfigError(f"k={self.k} exceeds min(m, n)={limit}")
        return self.k

    def resolve_path(self, a):
        return self.path_for(is_sparse(a))

    def path_for(self, sparse):
        if self.path == "auto":
            return "residual-free" if sparse else "dense-gram"
        if self.path == "dense-gram" and sparse:
            raise ConfigError("the dense-gram path needs a dense input; use residual-free for CSR")
        return self.path

    def to_dict(self):
        return asdict(self)


@dataclass
class ComponentReport:
    index: int
    iterations: int
    converged: bool
    overlap: float
    rayleigh: float
    seconds: float = 0.0


@dataclass
class IterationReport:
    components: list = field(default_factory=list)
    wall_time_s: float = 0.0
    truncated: bool = False
    notice: Optional[str] = None

    @property
    def iterations(self):
        return [c.iterations for c in self.components]

    @property
    def converged(self):
        return [c.converged for c in self.components]

    @property
    def overlaps(self):
        return [c.overlap for c in self.components]

    def to_dict(self):
        return {
            "iterations": self.iterations,
            "converged": self.converged,
            "overlaps": self.overlaps,
            "wall_time_s": self.wall_time_s,
            "truncated": self.truncated,
            "notice": self.notice,
        }


# ---------------------------------------------------------------------------
# степенен метод за един вектор
# ---------------------------------------------------------------------------

def svd_1d(apply, dim, eps, max_iter, seed, fixed_iters=None, index=0):
    """
    v1 = Bv0; v1 /= ‖v1‖; край при |v0·v1| ≥ 1 − eps.
    Връща (v, ComponentReport). Неконвергирал вектор не е грешка, само флаг.
    """
    rng = np.random.default_rng(seed)
    v0 = normalize(rng.standard_normal(dim))
    limit = fixed_iters or max_iter
    overlap = rayleigh = 0.0
    converged = False
    started = time.perf_counter()

    it = 0
    for it in range(1, limit + 1):
        v1 = np.asarray(apply(v0), dtype=np.float64)
        if v1.shape != (dim,):
            raise ShapeError(f"svd_1d: operator returned shape {v1.shape}, expected ({dim},)")
        if not np.all(np.isfinite(v1)):
            raise NumericError(f"component {index}: non-finite values at iteration {it}")
        rayleigh = float(v0 @ v1)
        size = norm2(v1)
        if size == 0.0:
            raise DegenerateInputError(f"component {index}: the operator annihilated the iterate")
        v1 = v1 / size
        overlap = abs(float(v0 @ v1))
        v0 = v1
        converged = overlap >= 1.0 - eps
        if converged and fixed_iters is None:
            break

    if not converged:
        log.warning("component %d: not converged after %d iterations (|v0·v1|=%.15f)",
                    index, it, overlap)
    report = ComponentReport(index=index, iterations=it, converged=converged, overlap=overlap,
                             rayleigh=rayleigh, seconds=time.perf_counter() - started)
    return v0, report


# ---------------------------------------------------------------------------
# residual-free Bv0
# ---------------------------------------------------------------------------

def _check_factors(x_rows, n, u, sigma, v, l):
    if u.shape[0] != x_rows or v.shape[0] != n or u.shape[1] < l or v.shape[1] < l or sigma.size < l:
        raise ShapeError(f"factors U{u.shape}, sigma({sigma.size},), V{v.shape} "
                         f"do not match X({x_rows}×{n}) with l={l}")


def _as_columns(a, rows):
    a = np.asarray(a, dtype=np.float64)
    if a.ndim == 1:
        a = a.reshape(rows, -1) if a.size else np.zeros((rows, 0))
    return a


def residual_gram_apply(x, u, sigma, v, l, v0):
    """
    (X − UΣVᵀ)ᵀ(X − UΣVᵀ)v0 по първите l компонента, без residual и без Gram:
        XᵀXv0 − VΣUᵀXv0 − XᵀUΣVᵀv0 + VΣ²Vᵀv0
    Точно е при ортонормирани колони на U.
    """
    u = _as_columns(u, x.shape[0])
    v = _as_columns(v, x.shape[1])
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    _check_factors(x.shape[0], x.shape[1], u, sigma, v, l)
    u_l, s, v_l = u[:, :l], sigma[:l], v[:, :l]

    xv = matvec(x, v0)
    t = v_l.T @ v0
    z = u_l.T @ xv
    w = xv - u_l @ (s * t)
    return matvec_transposed(x, w) - v_l @ (s * z) + v_l @ (s * s * t)


def _col_block(x, lo, hi):
    return x.col_slab(lo, hi) if is_sparse(x) else x[:, lo:hi]


def _row_block(x, lo, hi):
    return x.row_slab(lo, hi) if is_sparse(x) else x[lo:hi]


def _drop(store, *ids):
    for bid in ids:
        store.release(bid)
        store.evict(bid)


class _ComputeV:
    """Едно прилагане на residual-free оператора в един rank."""

    def __init__(self, x, u, sigma, v, v0, comm, store, batch_plan):
        self.x, self.u, self.sigma, self.v, self.v0 = x, u, sigma, v, v0
        self.l = sigma.size
        self.comm = comm
        self.store = store
        self.plan = batch_plan
        self.m_i, self.n = x.shape
        self.t = np.zeros(self.l)
        self.z = np.zeros(self.l)
        self.queue = TaskQueue(batch_plan.q_s, name=f"apply{comm.rank}")

    # ---- orthogonal: batch-ове по колоните (n) ----

    def _y_task(self, j):
        lo, hi = self.plan.ranges[j]
        a_id, v0_id, y_id = BlockId("A", 0, j), BlockId("V", 1, j), BlockId("scratch", 1, j)
        x_j = self.store.fetch(a_id, _col_block(self.x, lo, hi))
        v0_j = self.store.fetch(v0_id, self.v0[lo:hi])
        y_j = self.store.allocate(y_id, (self.m_i,))
        y_j[:] = matvec(x_j, v0_j)
        t_j = np.zeros(self.l)
        if self.l:
            vf_id = BlockId("V", 0, j)
            v_j = self.store.fetch(vf_id, self.v[lo:hi])
            t_j = v_j.T @ v0_j
            _drop(self.store, vf_id)
        _drop(self.store, a_id, v0_id)
        return y_id, y_j, t_j

    def _p_task(self, j):
        lo, hi = self.plan.ranges[j]
        a_id, p_id = BlockId("A", 0, j), BlockId("scratch", 2, j)
        x_j = self.store.fetch(a_id, _col_block(self.x, lo, hi))
        p_j = self.store.allocate(p_id, (hi - lo,))
        p_j[:] = matvec_transposed(x_j, self.w)
        _drop(self.store, a_id)
        if self.l:
            vf_id = BlockId("V", 0, j)
            v_j = self.store.fetch(vf_id, self.v[lo:hi])
            self.c[lo:hi] = v_j @ self.coef
            _drop(self.store, vf_id)
        return p_id

    def orthogonal(self):
        n_b = self.plan.n_b
        acc_id = BlockId("scratch", 0, 0)
        y = self.store.allocate(acc_id, (self.m_i,))

        def add_y(j, produced):
            y_id, y_j, t_j = produced
            y[:] += y_j
            self.t += t_j
            _drop(self.store, y_id)

        self.queue.run(range(n_b), self._y_task, add_y)

        s = self.sigma * self.t
        w_id = BlockId("scratch", 0, 1)
        self.w = self.store.allocate(w_id, (self.m_i,))
        if self.l:
            u_id = BlockId("U", 0, 0)
            u_dev = self.store.fetch(u_id, self.u)
            self.w[:] = y - u_dev @ s
            z_local = u_dev.T @ y
            _drop(self.store, u_id)
        else:
            self.w[:] = y
            z_local = np.zeros(0)
        _drop(self.store, acc_id)

        self.z = self.comm.all_reduce_sum(z_local)
        self.coef = self.sigma * self.sigma * self.t - self.sigma * self.z
        self.c = np.zeros(self.n)
        p_local = np.zeros(self.n)

        def collect_p(j, p_id):
            lo, hi = self.plan.ranges[j]
            self.store.writeback(p_id, p_local[lo:hi])
            _drop(self.store, p_id)

        self.queue.run(range(n_b), self._p_task, collect_p)
        _drop(self.store, w_id)

        return self.comm.all_reduce_sum(p_local) + self.c

    # ---- collinear: batch-ове по локалните редове (m_i) ----

    def _row_task(self, r):
        lo, hi = self.plan.ranges_for(self.comm.rank)[r]
        a_id, y_id, p_id = BlockId("A", r, 0), BlockId("scratch", 1, r), BlockId("scratch", 2, r)
        x_r = self.store.fetch(a_id, _row_block(self.x, lo, hi))
        y_r = self.store.allocate(y_id, (hi - lo,))
        y_r[:] = matvec(x_r, self.v0_dev)
        z_r = np.zeros(self.l)
        if self.l:
            u_id = BlockId("U", r, 0)
            u_r = self.store.fetch(u_id, self.u[lo:hi])
            z_r = u_r.T @ y_r
            y_r -= u_r @ self.s
            _drop(self.store, u_id)
        p_r = self.store.allocate(p_id, (self.n,))
        p_r[:] = matvec_transposed(x_r, y_r)
        _drop(self.store, a_id, y_id)
        return p_id, p_r, z_r

    def collinear(self):
        v0_id, vf_id, acc_id = BlockId("V", 1, 0), BlockId("V", 0, 0), BlockId("scratch", 0, 0)
        self.v0_dev = self.store.fetch(v0_id, self.v0)
        v_dev = None
        if self.l:
            v_dev = self.store.fetch(vf_id, self.v)
            self.t = v_dev.T @ self.v0_dev
        self.s = self.sigma * self.t
        p = self.store.allocate(acc_id, (self.n,))

        def add_p(r, produced):
            p_id, p_r, z_r = produced
            p[:] += p_r
            self.z += z_r
            _drop(self.store, p_id)

        self.queue.run(range(self.plan.n_b), self._row_task, add_p)

        self.z = self.comm.all_reduce_sum(self.z)
        p_local = np.zeros(self.n)
        self.store.writeback(acc_id, p_local)
        _drop(self.store, acc_id)
        p_sum = self.comm.all_reduce_sum(p_local)

        c = np.zeros(self.n)
        if self.l:
            c = v_dev @ (self.sigma * self.sigma * self.t - self.sigma * self.z)
            _drop(self.store, vf_id)
        _drop(self.store, v0_id)
        return p_sum + c


def dist_compute_v(x, u, sigma, v, v0, comm, store, batch_plan):
    """
    Разпределеното residual-free Bv0 за локалния slab x (m_i × n).

    u: локалните редове на U (m_i × l); sigma, v (n × l) и v0 са еднакви навсякъде.
    Точно два all-reduce на прилагане: UᵀXv0 (дължина l) и Xᵀw (дължина n).
    Batch сумите се правят в главната нишка в реда на batch-овете.
    """
    sigma = np.asarray(sigma, dtype=np.float64).reshape(-1)
    l = sigma.size
    u = np.asarray(u, dtype=np.float64).reshape(x.shape[0], l)
    v = np.asarray(v, dtype=np.float64).reshape(x.shape[1], l)
    v0 = np.asarray(v0, dtype=np.float64)
    _check_factors(x.shape[0], x.shape[1], u, sigma, v, l)
    if v0.shape != (x.shape[1],):
        raise ShapeError(f"dist_compute_v: v0 has shape {v0.shape}, expected ({x.shape[1]},)")

    op = _ComputeV(x, u, sigma, v, v0, comm, store, batch_plan)
    if batch_plan.orientation == "collinear":
        return op.collinear()
    return op.orthogonal()


# ---------------------------------------------------------------------------
# драйвер с дефлация
# ---------------------------------------------------------------------------

def working_slab(a, partition, rank):
    """Локалният slab на работния операнд (Aᵀ при column ос)."""
    r0, r1 = partition.slab(rank)
    if partition.axis == "row":
        return _row_block(a, r0, r1)
    if is_sparse(a):
        return a.col_slab(r0, r1).transpose()
    return np.ascontiguousarray(np.asarray(a)[:, r0:r1].T)


def normalize_signs(factors):
    """Най-големият по модул елемент на всяко v_l става положителен (u_l се обръща заедно с него)."""
    U, V = factors.U.copy(), factors.V.copy()
    for l in range(factors.k):
        idx = int(np.argmax(np.abs(V[:, l])))
        if V[idx, l] < 0:
            U[:, l] *= -1.0
            V[:, l] *= -1.0
    return SvdFactors(U, factors.sigma.copy(), V)


class _Deflation:
    """Състоянието на един rank по време на truncated SVD."""

    def __init__(self, a, config, comm, store, plans, host_pool, path):
        partition = plans.partition
        if tuple(a.shape) != (partition.m, partition.n):
            raise ShapeError(f"input {a.shape} does not match the plan ({partition.m}, {partition.n})")
        self.config = config
        self.comm = comm
        self.store = store
        self.plans = plans
        self.path = path
        self.k = config.resolve_k(*a.shape)
        self.x = working_slab(a, partition, comm.rank)
        self.m_i, self.n_w = self.x.shape
        self.pool = host_pool or HostPool()
        self.U = self.pool.allocate("U", (self.m_i, self.k), comm.rank)
        self.V = self.pool.allocate("V", (self.n_w, self.k), comm.rank)
        self.sigma = np.zeros(self.k)
        self.residual = None
        self.gram = None

    # ---- dense-gram ----

    def _form_residual(self, l):
        """X = A − U[:, :l]·diag(σ[:l])·V[:, :l]ᵀ, по колонни batch-ове на device."""
        if self.residual is None:
            self.residual = self.pool.allocate("X", (self.m_i, self.n_w), self.comm.rank)
        us_id = BlockId("U", 0, 0)
        us = self.store.fetch(us_id, self.U[:, :l] * self.sigma[:l])
        for j, (lo, hi) in enumerate(split_even(self.n_w, self.plans.batches.n_b)):
            a_id, v_id, r_id = BlockId("A", 0, j), BlockId("V", 0, j), BlockId("scratch", 3, j)
            a_j = self.store.fetch(a_id, self.x[:, lo:hi])
            v_j = self.store.fetch(v_id, self.V[lo:hi, :l])
            r_j = self.store.allocate(r_id, (self.m_i, hi - lo))
            np.subtract(a_j, us @ v_j.T, out=r_j)
            self.store.writeback(r_id, self.residual[:, lo:hi])
            _drop(self.store, a_id, v_id, r_id)
        _drop(self.store, us_id)
        return self.residual

    def _dense_operator(self, l):
        operand = self.x if l == 0 else self._form_residual(l)
        self.gram = dist_gram(operand, self.plans.batches, self.comm, self.store,
                              mode=self.plans.gram_mode, host_pool=self.pool)
        gram = self.gram
        if gram.mode == "replicated":
            return lambda v0: gram_matvec(gram, v0)
        return lambda v0: gram_matvec(gram, v0, self.comm, self.store)

    # ---- residual-free ----

    def _free_operator(self, l):
        u, s, v = self.U[:, :l], self.sigma[:l], self.V[:, :l]
        return lambda v0: dist_compute_v(self.x, u, s, v, v0, self.comm, self.store,
                                         self.plans.batches)

    # ---- общ цикъл ----

    def _release_gram(self):
        if self.gram is not None:
            self.gram.release(self.store)
            self.gram = None

    def run(self):
        started = time.perf_counter()
        report = IterationReport()
        found = 0
        for l in range(self.k):
            try:
                apply = self._dense_operator(l) if self.path == "dense-gram" else self._free_operator(l)
                v, comp = svd_1d(apply, self.n_w, self.config.eps, self.config.max_iter,
                                 self.config.seed + l, self.config.fixed_iters, index=l)
            except DegenerateInputError as exc:
                report.truncated = True
                report.notice = f"rank exhausted at component {l + 1}: {exc}"
                break
            finally:
                self._release_gram()

            # двойката се възстановява от оригиналната A
            u_i = matvec(self.x, v)
            sq = self.comm.all_reduce_sum(np.array([u_i @ u_i]))[0]
            s = math.sqrt(sq)
            if s < RANK_TOL * max(1.0, self.sigma[0]):
                report.truncated = True
                report.notice = f"rank exhausted at component {l + 1}: sigma={s:.3g}"
                break
            self.U[:, l] = u_i / s
            self.V[:, l] = v
            self.sigma[l] = s
            report.components.append(comp)
            found = l + 1
            if self.comm.rank == 0:
                log.info("component %d: sigma=%.10g iterations=%d converged=%s",
                         l + 1, s, comp.iterations, comp.converged)

        if report.truncated and self.comm.rank == 0:
            log.warning("%s; returning %d of %d components", report.notice, found, self.k)
        report.wall_time_s = time.perf_counter() - started
        return self._gather(found), report

    def _gather(self, found):
        """U_w на rank 0 през reduce на нулево-допълнени slab-ове; другите rank-ове връщат None."""
        partition = self.plans.partition
        m_w = partition.working_shape[0]
        r0, r1 = partition.slab(self.comm.rank)
        full = np.zeros((m_w, found))
        full[r0:r1] = self.U[:, :found]
        u_w = self.comm.reduce_sum(full, 0)
        if self.comm.rank != 0:
            return None
        v_w = np.array(self.V[:, :found])
        if partition.axis == "column":
            u_w, v_w = v_w, u_w
        return normalize_signs(SvdFactors(u_w, self.sigma[:found].copy(), v_w))


def svd_truncated_dense(a, config, comm, store, plans, host_pool=None):
    """Плътен път: явен residual + dist_gram за всеки компонент. Връща (factors | None, report)."""
    if is_sparse(a):
        raise ConfigError("the dense-gram path needs a dense input; use residual-free for CSR")
    return _Deflation(a, config, comm, store, plans, host_pool, "dense-gram").run()


def svd_truncated_sparse(a, config, comm, store, plans, host_pool=None):
    """Residual-free път (работи и за плътна A). Връща (factors | None, report)."""
    return _Deflation(a, config, comm, store, plans, host_pool, "residual-free").run()


def svd_truncated(a, config, comm, store, plans, host_pool=None):
    """Избира пътя по config.path (auto: CSR → residual-free, плътна → dense-gram)."""
    path = config.resolve_path(a)
    if path == "dense-gram":
        return svd_truncated_dense(a, config, comm, store, plans, host_pool)
    return svd_truncated_sparse(a, config, comm, store, plans, host_pool)
