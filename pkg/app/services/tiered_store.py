# --------------------------------------------------------------
# Два нива памет за един rank:
#  - host tier  → numpy масиви (RAM) или np.memmap файлове (HostPool)
#  - device tier → блокове с твърд бюджет в байтове (TieredStore)
#
# Моделира H2D / D2H копия: броячи на байтове и копия, peak на device,
# lease-ове (блок в употреба не може да се evict-не) и по желание
# синтетична цена на байт, за да се вижда припокриването при q_s > 1.
#
# Eviction е изрично (извиква го scheduler-ът, който знае живота на блоковете).
# --------------------------------------------------------------

import logging
import threading
import time
from contextlib import contextmanager
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from ..errors import CapacityError, LeaseError, ResidencyError, UnsupportedScenarioError, ConfigError

log = logging.getLogger(__name__)

TAGS = ("A", "U", "V", "B", "scratch")


@dataclass(frozen=True)
class BlockId:
    tag: str
    i: int = 0
    j: int = 0

    def __post_init__(self):
        if self.tag not in TAGS:
            raise ConfigError(f"unknown block tag {self.tag!r}")

    def __str__(self):
        return f"{self.tag}[{self.i},{self.j}]"


@dataclass(frozen=True)
class StoreStats:
    device_budget: int
    device_used: int
    peak_device_used: int
    h2d_bytes: int
    d2h_bytes: int
    h2d_count: int
    d2h_count: int
    resident_blocks: int


@dataclass
class _Resident:
    block: object
    nbytes: int
    host: Optional[np.ndarray]
    leases: int = 0


def _device_copy(source):
    if isinstance(source, np.ndarray):
        return np.array(source, dtype=np.float64, copy=True)
    return source.copy()


class TieredStore:
    """Device tier с бюджет; всички мутации са под един lock."""

    def __init__(self, device_budget, *, transfer_cost_ns_per_byte=0.0, name="store"):
        if device_budget <= 0:
            raise ConfigError(f"device budget must be positive, got {device_budget}")
        self.device_budget = int(device_budget)
        self.transfer_cost_ns_per_byte = float(transfer_cost_ns_per_byte)
        self.name = name
        self._lock = threading.Lock()
        self._resident = {}
        self.device_used = 0
        self.peak_device_used = 0
        self.h2d_bytes = 0
        self.d2h_bytes = 0
        self.h2d_count = 0
        self.d2h_count = 0

    # ---- вътрешни ----

    def _reserve(self, block_id, nbytes):
        # извиква се под lock
        if nbytes > self.device_budget:
            raise UnsupportedScenarioError(
                f"{self.name}: block {block_id} ({nbytes} B) exceeds the device budget "
                f"({self.device_budget} B)")
        if self.device_used + nbytes > self.device_budget:
            raise CapacityError(
                f"{self.name}: no room for {block_id} ({nbytes} B): "
                f"{self.device_used}/{self.device_budget} B in use")
        self.device_used += nbytes
        self.peak_device_used = max(self.peak_device_used, self.device_used)
        assert self.device_used <= self.device_budget

    def _charge(self, nbytes):
        # извън lock-а: паралелните задачи "плащат" едновременно
        if self.transfer_cost_ns_per_byte > 0 and nbytes:
            time.sleep(nbytes * self.transfer_cost_ns_per_byte * 1e-9)

    def _register(self, block_id, block, host):
        nbytes = int(block.nbytes)
        with self._lock:
            if block_id in self._resident:
                raise ResidencyError(f"{self.name}: {block_id} is already resident")
            self._reserve(block_id, nbytes)
            self._resident[block_id] = _Resident(block, nbytes, host, leases=1)
        return block

    # ---- публично API ----

    def fetch(self, block_id, source):
        """
        H2D: копира `source` (host масив/изглед или CsrMatrix) на device и го lease-ва.
        Вече резидентен блок се връща без копие (и без байтове).
        """
        with self._lock:
            entry = self._resident.get(block_id)
            if entry is not None:
                entry.leases += 1
                return entry.block
            nbytes = int(source.nbytes)
            self._reserve(block_id, nbytes)
            entry = _Resident(None, nbytes, source if isinstance(source, np.ndarray) else None, leases=1)
            self._resident[block_id] = entry
            self.h2d_bytes += nbytes
            self.h2d_count += 1
            # копието се прави под lock-а, за да не види друга задача празен блок
            entry.block = _device_copy(source)
        self._charge(nbytes)
        log.debug("%s: H2D %s (%d B)", self.name, block_id, nbytes)
        return entry.block

    def put(self, block_id, block, host=None):
        """Регистрира блок, изчислен директно на device (без H2D)."""
        return self._register(block_id, block, host)

    def allocate(self, block_id, shape, host=None):
        """Нулев device буфер (scratch, резултат, реплика)."""
        nbytes = int(np.prod(shape, dtype=np.int64)) * 8
        with self._lock:
            if block_id in self._resident:
                raise ResidencyError(f"{self.name}: {block_id} is already resident")
            self._reserve(block_id, nbytes)
            block = np.zeros(shape, dtype=np.float64)
            self._resident[block_id] = _Resident(block, nbytes, host, leases=1)
        return block

    def release(self, block_id):
        with self._lock:
            entry = self._resident.get(block_id)
            if entry is None:
                raise ResidencyError(f"{self.name}: release of non-resident {block_id}")
            if entry.leases <= 0:
                raise LeaseError(f"{self.name}: {block_id} has no active lease")
            entry.leases -= 1

    @contextmanager
    def leased(self, block_id, source):
        block = self.fetch(block_id, source)
        try:
            yield block
        finally:
            self.release(block_id)

    def writeback(self, block_id, target=None, *, rows=None, transpose=False):
        """
        D2H: копира блока (или редове от него / от транспонирания му) в host масив.
        По подразбиране целта е host източникът, от който е fetch-нат.
        """
        with self._lock:
            entry = self._resident.get(block_id)
            if entry is None:
                raise ResidencyError(f"{self.name}: writeback of non-resident {block_id}")
            dest = entry.host if target is None else target
            if dest is None:
                raise ResidencyError(f"{self.name}: {block_id} has no host destination")
            data = entry.block.T if transpose else entry.block
            if rows is not None:
                data = data[rows]
            dest[...] = data
            nbytes = int(data.size) * 8
            self.d2h_bytes += nbytes
            self.d2h_count += 1
        self._charge(nbytes)
        log.debug("%s: D2H %s (%d B)", self.name, block_id, nbytes)

    def evict(self, block_id):
        with self._lock:
            entry = self._resident.get(block_id)
            if entry is None:
                raise ResidencyError(f"{self.name}: evict of non-resident {block_id}")
            if entry.leases > 0:
                raise LeaseError(f"{self.name}: {block_id} is leased ({entry.leases})")
            del self._resident[block_id]
            self.device_used -= entry.nbytes

    def discard(self, block_id):
        """Evict ако е резидентен и свободен; иначе нищо. Връща дали е освободен."""
        with self._lock:
            entry = self._resident.get(block_id)
            if entry is None or entry.leases > 0:
                return False
            del self._resident[block_id]
            self.device_used -= entry.nbytes
            return True

    def evict_all(self, tag=None):
        with self._lock:
            ids = [b for b, e in self._resident.items()
                   if (tag is None or b.tag == tag) and e.leases == 0]
            for b in ids:
                self.device_used -= self._resident.pop(b).nbytes

    def is_resident(self, block_id):
        with self._lock:
            return block_id in self._resident

    def stats(self):
        with self._lock:
            return StoreStats(
                device_budget=self.device_budget,
                device_used=self.device_used,
                peak_device_used=self.peak_device_used,
                h2d_bytes=self.h2d_bytes,
                d2h_bytes=self.d2h_bytes,
                h2d_count=self.h2d_count,
                d2h_count=self.d2h_count,
                resident_blocks=len(self._resident),
            )


class HostPool:
    """
    Host tier: нулеви масиви в RAM или, ако е зададена директория,
    np.memmap файл на таг (float64 little-endian) → `rank{r}_{tag}.bin`.
    """

    def __init__(self, directory=None):
        self.directory = Path(directory) if directory else None
        if self.directory is not None:
            self.directory.mkdir(parents=True, exist_ok=True)

    def allocate(self, tag, shape, rank=0):
        if self.directory is None:
            return np.zeros(shape, dtype=np.float64)
        path = self.directory / f"rank{rank}_{tag}.bin"
        if int(np.prod(shape)) == 0:
            return np.zeros(shape, dtype=np.float64)
        return np.memmap(path, dtype="<f8", mode="w+", shape=tuple(shape))
