# --------------------------------------------------------------
# In-process колективи върху N rank-а (заместват NCCL/MPI):
#  - all_reduce_sum / reduce_sum / barrier
#  - редукция в фиксиран ред 0 → N−1 → побитово еднакъв резултат
#  - timeout на всеки колектив → harness fault = грешка, не зависване
#
# Всеки rank е отделна нишка; Communicator е handle-ът на един rank.
# Протокол: два threading.Barrier етапа на колектив
#   етап 1: всички са оставили буфера си → action редуцира
#   етап 2: всички са прочели резултата → action чисти слотовете
# --------------------------------------------------------------

import logging
import threading
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

from ..errors import ConfigError, CollectiveError, CollectiveTimeout, CollectiveAborted

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class CommStats:
    all_reduce_calls: int
    reduce_calls: int
    barrier_calls: int
    bytes_moved: int


class CommGroup:
    """Група от `size` rank-а със споделени слотове и броячи."""

    def __init__(self, size, timeout=30.0):
        if size < 1:
            raise ConfigError(f"communicator size must be ≥ 1, got {size}")
        self.size = size
        self.timeout = timeout
        self._barrier = threading.Barrier(size, action=self._on_phase, timeout=timeout)
        self._lock = threading.Lock()
        self._slots = [None] * size
        self._calls = [None] * size
        self._result = None
        self._error = None
        self._phase = 0
        self._aborted = False

        self.all_reduce_calls = 0
        self.reduce_calls = 0
        self.barrier_calls = 0
        self.bytes_moved = 0

    def handle(self, rank):
        if not 0 <= rank < self.size:
            raise ConfigError(f"rank {rank} outside 0..{self.size - 1}")
        return Communicator(self, rank)

    def stats(self):
        with self._lock:
            return CommStats(self.all_reduce_calls, self.reduce_calls,
                             self.barrier_calls, self.bytes_moved)

    def abort(self):
        """Събужда чакащите rank-ове с CollectiveAborted (ползва се при грешка в rank)."""
        self._aborted = True
        self._barrier.abort()

    # ---- вътрешен протокол ----

    def _on_phase(self):
        # action се изпълнява от една нишка, докато останалите чакат
        if self._phase == 0:
            self._reduce_slots()
            self._phase = 1
        else:
            self._slots = [None] * self.size
            self._calls = [None] * self.size
            self._result = None
            self._error = None
            self._phase = 0

    def _reduce_slots(self):
        kinds = set(self._calls)
        if len(kinds) != 1:
            self._error = f"ranks disagree on the collective: {sorted(map(str, kinds))}"
            return
        kind, _root = self._calls[0]
        if kind == "barrier":
            with self._lock:
                self.barrier_calls += 1
            return
        shapes = {s.shape for s in self._slots}
        if len(shapes) != 1:
            self._error = f"buffer shapes differ across ranks: {sorted(shapes)}"
            return
        total = self._slots[0].copy()
        for buf in self._slots[1:]:
            total += buf
        self._result = total
        # всеки rank праща своя payload по една връзка
        with self._lock:
            if kind == "all_reduce":
                self.all_reduce_calls += 1
            else:
                self.reduce_calls += 1
            self.bytes_moved += self.size * total.nbytes

    def _wait(self):
        try:
            self._barrier.wait()
        except threading.BrokenBarrierError:
            if self._aborted:
                raise CollectiveAborted("collective aborted: another rank failed") from None
            raise CollectiveTimeout(f"collective timed out after {self.timeout}s") from None

    def _collective(self, rank, kind, buffer, root=None):
        self._slots[rank] = None if buffer is None else np.array(buffer, dtype=np.float64, copy=True)
        self._calls[rank] = (kind, root)
        self._wait()
        error, result = self._error, self._result
        if error is None and result is not None:
            own = self._slots[rank]
            result = result.copy() if (kind == "all_reduce" or rank == root) else own
        self._wait()
        if error is not None:
            raise CollectiveError(error)
        return result

    # ---- публични колективи (rank + буфер) ----

    def all_reduce_sum(self, rank, buffer):
        return self._collective(rank, "all_reduce", buffer)

    def reduce_sum(self, rank, buffer, root):
        if not 0 <= root < self.size:
            raise ConfigError(f"reduce root {root} outside 0..{self.size - 1}")
        return self._collective(rank, "reduce", buffer, root)

    def barrier(self, rank):
        self._collective(rank, "barrier", None)


class Communicator:
    """Handle на един rank; ползва се от точно една нишка наведнъж."""

    def __init__(self, group, rank):
        self.group = group
        self.rank = rank

    @property
    def size(self):
        return self.group.size

    def all_reduce_sum(self, buffer):
        return self.group.all_reduce_sum(self.rank, buffer)

    def reduce_sum(self, buffer, root):
        return self.group.reduce_sum(self.rank, buffer, root)

    def barrier(self):
        self.group.barrier(self.rank)


def run_ranks(group, target):
    """
    Пуска target(comm) на всеки rank в отделна нишка и връща резултатите по rank.

    При грешка в някой rank групата се abort-ва, за да не чакат другите до timeout;
    вдига се първата "истинска" грешка (не последствията от abort-а).
    """
    def _body(rank):
        try:
            return target(group.handle(rank))
        except BaseException:
            group.abort()
            raise

    with ThreadPoolExecutor(max_workers=group.size, thread_name_prefix="rank") as pool:
        futures = [pool.submit(_body, r) for r in range(group.size)]
        errors = [f.exception() for f in futures]

    real = [e for e in errors if e is not None and not isinstance(e, CollectiveAborted)]
    if real:
        raise real[0]
    echoes = [e for e in errors if e is not None]
    if echoes:
        raise echoes[0]
    return [f.result() for f in futures]

