# --------------------------------------------------------------
# Разпределен, batch-нат Gram B = XᵀX.
#
# Плочки B_ij = X_iᵀ X_j по колонни batch-ове на локалния slab.
# Задачи само за i ≤ j (n_b(n_b+1)/2 броя); извън-диагоналната задача
# дава и B_ji = B_ijᵀ без второ H2D. Ред: колона j отвън, i = 0..j отвътре,
# така batch-ът X_j остава на device през цялата си колона.
#
# До q_s задачи се изпълняват едновременно на rank, всяка в лентата на своя slot.
# Колективите се пускат само от главната нишка на rank-а, в реда на задачите,
# за да съвпадат последователностите между rank-овете.
#
# Изход:
#   replicated  → цялото B (n×n) на device при всеки rank, all-reduce на плочка
#   distributed → редове [r0, r1) от B на host при всеки rank, reduce към
#                 собствениците на засегнатите редове
# --------------------------------------------------------------

import logging
from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError, ConfigError
from .linalg import is_sparse
from .partition import split_even
from .task_queue import TaskQueue
from .tiered_store import BlockId, HostPool

log = logging.getLogger(__name__)

GRAM_MODES = ("replicated", "distributed")


@dataclass
class GramTask:
    i: int
    j: int
    slot: int
    state: str = "pending"


@dataclass
class GramResult:
    matrix: np.ndarray
    mode: str
    ownership: tuple
    rank: int
    n: int
    tiles: tuple
    tasks: list = field(default_factory=list)
    max_active: int = 0
    lane_counts: list = field(default_factory=list)

    @property
    def row_range(self):
        if self.mode == "replicated":
            return (0, self.n)
        return self.ownership[self.rank]

    def release(self, store):
        """Освобождава реплицираното B от device."""
        if self.mode == "replicated":
            store.release(BlockId("B"))
            store.evict(BlockId("B"))


def gram_tasks(n_b, q_s):
    """(i, j) с i ≤ j, колона j отвън; slot е лентата в TaskQueue (round-robin по q_s)."""
    tasks = []
    for j in range(n_b):
        for i in range(j + 1):
            tasks.append(GramTask(i=i, j=j, slot=len(tasks) % q_s))
    return tasks


def _column_block(x, lo, hi):
    if is_sparse(x):
        return x.col_slab(lo, hi)
    return x[:, lo:hi]


def _tile_product(a_i, a_j, out):
    if is_sparse(a_i):
        out[...] = (a_i.scipy.T @ a_j.scipy).toarray()
    else:
        np.matmul(a_i.T, a_j, out=out)


def _intersect(lo, hi, r0, r1):
    a, b = max(lo, r0), min(hi, r1)
    return (a, b) if a < b else None


def _owners(ownership, *ranges):
    out = set()
    for lo, hi in ranges:
        for r, (r0, r1) in enumerate(ownership):
            if _intersect(lo, hi, r0, r1):
                out.add(r)
    return sorted(out)


class _GramRun:
    """Състоянието на едно изпълнение на dist_gram в един rank."""

    def __init__(self, x, n_b, q_s, comm, store, mode, host_pool):
        self.x = x
        self.n = x.shape[1]
        self.comm = comm
        self.store = store
        self.mode = mode
        self.q_s = q_s
        self.tiles = tuple(split_even(self.n, n_b))
        self.ownership = tuple(split_even(self.n, comm.size)) if mode == "distributed" \
            else tuple((0, self.n) for _ in range(comm.size))

        if mode == "replicated":
            self.b = store.allocate(BlockId("B"), (self.n, self.n))
        else:
            r0, r1 = self.ownership[comm.rank]
            self.b = (host_pool or HostPool()).allocate("B", (r1 - r0, self.n), comm.rank)

    def _a_id(self, idx):
        return BlockId("A", 0, idx)

    def _source(self, idx):
        lo, hi = self.tiles[idx]
        return _column_block(self.x, lo, hi)

    def run_task(self, task):
        task.state = "running"
        i, j = task.i, task.j
        a_j = self.store.fetch(self._a_id(j), self._source(j))
        a_i = a_j if i == j else self.store.fetch(self._a_id(i), self._source(i))
        (i0, i1), (j0, j1) = self.tiles[i], self.tiles[j]
        tile_id = BlockId("scratch", i, j)
        tile = self.store.allocate(tile_id, (i1 - i0, j1 - j0))
        _tile_product(a_i, a_j, tile)
        if i != j:
            self.store.release(self._a_id(i))
        self.store.release(self._a_id(j))
        return tile_id, tile

    def finalize(self, task, produced):
        tile_id, tile = produced
        i, j = task.i, task.j
        (i0, i1), (j0, j1) = self.tiles[i], self.tiles[j]

        if self.mode == "replicated":
            summed = self.comm.all_reduce_sum(tile)
            self.b[i0:i1, j0:j1] = summed
            if i != j:
                self.b[j0:j1, i0:i1] = summed.T
        else:
            ranges = [(i0, i1)] if i == j else [(i0, i1), (j0, j1)]
            r0, r1 = self.ownership[self.comm.rank]
            # всеки owner получава сумата на локалните части, не на вече сумирана плочка
            partial = tile.copy()
            for root in _owners(self.ownership, *ranges):
                summed = self.comm.reduce_sum(partial, root)
                if root != self.comm.rank:
                    continue
                tile[...] = summed
                rows = _intersect(i0, i1, r0, r1)
                if rows:
                    lo, hi = rows
                    self.store.writeback(tile_id, self.b[lo - r0:hi - r0, j0:j1],
                                         rows=slice(lo - i0, hi - i0))
                cols = _intersect(j0, j1, r0, r1) if i != j else None
                if cols:
                    lo, hi = cols
                    self.store.writeback(tile_id, self.b[lo - r0:hi - r0, i0:i1],
                                         rows=slice(lo - j0, hi - j0), transpose=True)

        self.store.release(tile_id)
        self.store.evict(tile_id)
        # вътрешният batch си отива веднага; X_j остава до края на колоната си
        if i != j:
            self.store.discard(self._a_id(i))
        else:
            self.store.discard(self._a_id(j))
        task.state = "done"
        log.debug("rank %d: gram task (%d,%d) done", self.comm.rank, i, j)


def dist_gram(x, batch_plan, comm, store, *, mode="replicated", host_pool=None):
    """
    B = Σ_ranks X_rankᵀ X_rank по редуцирания график на задачите.

    x: локалният slab на rank-а (m_i × n, плътен host масив или CsrMatrix).
    Плочките винаги делят Gram оста (n) на batch_plan.n_b части.
    """
    if mode not in GRAM_MODES:
        raise ConfigError(f"unknown gram mode {mode!r}")
    if len(x.shape) != 2:
        raise ShapeError(f"dist_gram: expected a 2-D slab, got {x.shape}")
    n_b = batch_plan.n_b
    if n_b > x.shape[1]:
        raise ConfigError(f"n_b={n_b} exceeds the Gram axis length {x.shape[1]}")
    q_s = max(1, min(batch_plan.q_s, n_b))

    run = _GramRun(x, n_b, q_s, comm, store, mode, host_pool)
    tasks = gram_tasks(n_b, q_s)
    queue = TaskQueue(q_s, name=f"gram{comm.rank}")
    queue.run(tasks, run.run_task, run.finalize, slot=lambda task: task.slot)

    for idx in range(n_b):
        store.discard(run._a_id(idx))

    log.debug("rank %d: gram n=%d n_b=%d q_s=%d tasks=%d max_active=%d",
              comm.rank, run.n, n_b, q_s, len(tasks), queue.max_active)
    return GramResult(matrix=run.b, mode=mode, ownership=run.ownership, rank=comm.rank,
                      n=run.n, tiles=run.tiles, tasks=tasks, max_active=queue.max_active,
                      lane_counts=list(queue.lane_counts))


def gram_matvec(gram, v, comm=None, store=None):
    """
    Bv. Replicated: локално. Distributed: всеки rank умножава своя slab
    (по редови парчета през store, ако е подаден) и конкатенацията
    се получава с all-reduce на вектори с непресичащи се носители.
    """
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (gram.n,):
        raise ShapeError(f"gram_matvec: B is {gram.n}×{gram.n}, v has shape {v.shape}")
    if gram.mode == "replicated":
        return gram.matrix @ v

    r0, r1 = gram.row_range
    local = np.zeros(gram.n)
    if store is None:
        local[r0:r1] = gram.matrix @ v
    else:
        step = max(hi - lo for lo, hi in gram.tiles)
        for c0 in range(0, r1 - r0, step):
            c1 = min(r1 - r0, c0 + step)
            bid = BlockId("B", c0, 1)
            with store.leased(bid, gram.matrix[c0:c1]) as rows:
                local[r0 + c0:r0 + c1] = rows @ v
            store.evict(bid)
    if comm is None:
        return local
    return comm.all_reduce_sum(local)
