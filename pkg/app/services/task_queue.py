# --------------------------------------------------------------
# Ограничена опашка от задачи в един rank (заместител на CUDA streams):
#  - q_s ленти, всяка с по една нишка; задачата отива в лентата на своя слот
#  - в полет са най-много q_s задачи
#  - резултатите се финализират в главната нишка, в реда на подаване
#    (там живеят колективите → еднаква последователност във всички rank-ове)
#  - брои максимално активните задачи и задачите по лента
# --------------------------------------------------------------

import logging
import threading
from collections import deque
from concurrent.futures import ThreadPoolExecutor

from ..errors import ConfigError

log = logging.getLogger(__name__)


class TaskQueue:
    def __init__(self, q_s, name="queue"):
        if q_s < 1:
            raise ConfigError(f"queue size must be ≥ 1, got {q_s}")
        self.q_s = q_s
        self.name = name
        self._lock = threading.Lock()
        self._active = 0
        self.max_active = 0
        self.executed = 0
        self.lane_counts = [0] * q_s

    def _tracked(self, work, item):
        with self._lock:
            self._active += 1
            self.max_active = max(self.max_active, self._active)
        try:
            return work(item)
        finally:
            with self._lock:
                self._active -= 1
                self.executed += 1

    def lane_name(self, lane):
        return f"{self.name}-s{lane}"

    def run(self, items, work, finalize, slot=None):
        """
        work(item) → резултат (в лентата); finalize(item, резултат) в текущата нишка.
        slot(item) избира лентата 0..q_s-1; без него лентите се редуват по реда на подаване.
        Нова задача се подава само когато в полет има < q_s.
        """
        pending = deque()
        lanes = [ThreadPoolExecutor(max_workers=1, thread_name_prefix=self.lane_name(k))
                 for k in range(self.q_s)]
        try:
            for idx, item in enumerate(items):
                lane = idx % self.q_s if slot is None else slot(item)
                if not 0 <= lane < self.q_s:
                    raise ConfigError(f"{self.name}: slot {lane} outside 0..{self.q_s - 1}")
                while len(pending) >= self.q_s:
                    done, future = pending.popleft()
                    finalize(done, future.result())
                self.lane_counts[lane] += 1
                pending.append((item, lanes[lane].submit(self._tracked, work, item)))
            while pending:
                done, future = pending.popleft()
                finalize(done, future.result())
        finally:
            for pool in lanes:
                pool.shutdown(wait=True)
        log.debug("%s: %d tasks, max active %d, per lane %s",
                  self.name, self.executed, self.max_active, self.lane_counts)
