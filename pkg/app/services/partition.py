# --------------------------------------------------------------
# Планиране преди изпълнение:
#  - ос на разпределение (row / column) и slab-ове по rank
#  - batch геометрия (n_b, b_s, collinear / orthogonal, q_s)
#  - оценка на паметта и OOM degree (0 / 1 / 2) + placement host/device
#
# Всичко тук е чиста функция без споделено състояние.
# Размерът на елемент е фиксиран на 8 байта (float64), както в ядрото.
# --------------------------------------------------------------

import logging
import math
from dataclasses import dataclass, field, asdict

from ..errors import ConfigError, UnsupportedScenarioError

log = logging.getLogger(__name__)

ELEMENT_BYTES = 8
# CSR: 8 байта стойност + 8 байта индекс на колона
CSR_ENTRY_BYTES = 16

AXES = ("row", "column")
ORIENTATIONS = ("collinear", "orthogonal")


def split_even(length, parts):
    """
    [0, length) на `parts` съседни интервала; остатъкът отива при първите.
    Пр.: split_even(10, 4) → [(0,3), (3,6), (6,8), (8,10)]
    """
    if parts < 1 or parts > length:
        raise ConfigError(f"cannot split {length} items into {parts} parts")
    base, rem = divmod(length, parts)
    out, start = [], 0
    for p in range(parts):
        size = base + (1 if p < rem else 0)
        out.append((start, start + size))
        start += size
    return out


@dataclass(frozen=True)
class PartitionPlan:
    m: int
    n: int
    workers: int
    axis: str
    slabs: tuple
    k: int = 0

    @property
    def working_shape(self):
        """Формата, върху която работят rank-овете: Aᵀ при column ос."""
        return (self.n, self.m) if self.axis == "column" else (self.m, self.n)

    def slab(self, rank):
        return self.slabs[rank]

    def to_dict(self):
        d = asdict(self)
        d["slabs"] = [list(s) for s in self.slabs]
        return d


@dataclass(frozen=True)
class BatchPlan:
    n_b: int
    b_s: int
    orientation: str
    q_s: int
    # orthogonal: един списък за всички rank-ове; collinear: локални интервали по rank
    ranges: tuple
    queue_clamped: bool = False

    def ranges_for(self, rank):
        if self.orientation == "orthogonal":
            return self.ranges
        return self.ranges[rank]

    def to_dict(self):
        d = asdict(self)
        d["ranges"] = _listify(self.ranges)
        return d


def _listify(x):
    if isinstance(x, (tuple, list)):
        return [_listify(i) for i in x]
    return x


@dataclass(frozen=True)
class MemoryEstimate:
    s_a: int
    s_svd: int


@dataclass(frozen=True)
class OomAssessment:
    s_a: int
    s_svd: int
    degree: int
    placement: dict = field(default_factory=dict)
    per_worker_bytes: int = 0
    largest_block_bytes: int = 0
    device_budget: int = 0

    @property
    def gram_mode(self):
        # B на device → реплициран; иначе slab по rank на host
        return "replicated" if self.placement.get("B") == "device" else "distributed"

    def to_dict(self):
        d = asdict(self)
        d["gram_mode"] = self.gram_mode
        return d


def choose_partition(m, n, workers, k=0):
    """
    column ос iff n > m (тогава работим върху Aᵀ), иначе row.
    Равенството m = n → row.
    """
    if m < 1 or n < 1 or workers < 1:
        raise ConfigError(f"invalid shape/workers: m={m}, n={n}, N={workers}")
    axis = "column" if n > m else "row"
    length = n if axis == "column" else m
    if workers > length:
        raise ConfigError(f"{workers} workers exceed the {axis} axis length {length}")
    slabs = tuple(split_even(length, workers))
    log.debug("partition m=%d n=%d N=%d → %s %s", m, n, workers, axis, slabs)
    return PartitionPlan(m=m, n=n, workers=workers, axis=axis, slabs=slabs, k=k)


def estimate_memory(m, n, k, sparse=False, density=1.0):
    """
    s_a = m·n·8 (плътен отпечатък на A).
    Dense: s_svd ≈ 4·s_a (A, пертурбирана A, междинен продукт, ко-фактори).
    Sparse: s_svd ≈ 2·s_a (плътният residual доминира).
    """
    if k > min(m, n):
        raise ConfigError(f"k={k} exceeds min(m, n)={min(m, n)}")
    s_a = m * n * ELEMENT_BYTES
    s_svd = (2 if sparse else 4) * s_a
    return MemoryEstimate(s_a=s_a, s_svd=s_svd)


def largest_block_bytes(plan, batches, k, sparse=False, density=1.0, with_gram=True):
    """Най-големият единичен блок, който трябва да е на device едновременно."""
    _, nw = plan.working_shape
    slab_rows = max(r1 - r0 for r0, r1 in plan.slabs)
    tile = max(hi - lo for lo, hi in split_even(nw, min(batches.n_b, nw)))
    if batches.orientation == "orthogonal":
        rows, cols = slab_rows, batches.b_s
    else:
        rows, cols = batches.b_s, nw
    if sparse:
        x_block = (rows + 1) * ELEMENT_BYTES + math.ceil(rows * cols * density) * CSR_ENTRY_BYTES
    else:
        x_block = rows * cols * ELEMENT_BYTES
    cofactor = (batches.b_s if batches.orientation == "orthogonal" else nw) * max(k, 1) * ELEMENT_BYTES
    blocks = [x_block, cofactor]
    if with_gram and not sparse:
        blocks.append(tile * tile * ELEMENT_BYTES)
    return int(max(blocks))


def classify_oom(estimate, device_budget, *, workers=1, axis="row", largest_block=0):
    """
    degree 0: s_svd/N ≤ budget → всичко на device.
    degree 1: не се побира, но най-големият блок се побира → тежкият
              ко-фактор (V при row, U при column) и B отиват на host.
    degree 2: UnsupportedScenarioError.
    Монотонна: по-голям бюджет никога не вдига degree.
    """
    if device_budget <= 0:
        raise ConfigError(f"device budget must be positive, got {device_budget}")
    per_worker = math.ceil(estimate.s_svd / workers)
    heavy = "V" if axis == "row" else "U"
    light = "U" if heavy == "V" else "V"
    common = dict(s_a=estimate.s_a, s_svd=estimate.s_svd, per_worker_bytes=per_worker,
                  largest_block_bytes=int(largest_block), device_budget=int(device_budget))

    if per_worker <= device_budget:
        placement = {"A": "device", "U": "device", "Sigma": "device", "V": "device", "B": "device"}
        return OomAssessment(degree=0, placement=placement, **common)

    if largest_block <= device_budget:
        placement = {"A": "device", light: "device", "Sigma": "device", heavy: "host", "B": "host"}
        return OomAssessment(degree=1, placement=placement, **common)

    assessment = OomAssessment(degree=2, placement={}, **common)
    raise UnsupportedScenarioError(
        f"largest block ({largest_block} B) exceeds the device budget ({device_budget} B)",
        assessment=assessment,
    )


def plan_batches(plan, orientation, n_b, q_s):
    """
    orthogonal: n_b batch-а по неразпределената ос (b_s = min(m,n)/n_b),
                еднакви за всички rank-ове.
    collinear:  n_b batch-а по локалния slab (b_s = max(m,n)/(N·n_b)).
    q_s > n_b се свива до n_b с warning флаг.
    """
    if orientation not in ORIENTATIONS:
        raise ConfigError(f"unknown orientation {orientation!r}")
    if n_b < 1 or q_s < 1:
        raise ConfigError(f"n_b and q_s must be ≥ 1 (got n_b={n_b}, q_s={q_s})")

    _, nw = plan.working_shape
    if orientation == "orthogonal":
        if n_b > nw:
            raise ConfigError(f"n_b={n_b} exceeds the batched axis length {nw}")
        ranges = tuple(split_even(nw, n_b))
        b_s = max(hi - lo for lo, hi in ranges)
    else:
        shortest = min(s1 - s0 for s0, s1 in plan.slabs)
        if n_b > shortest:
            raise ConfigError(f"n_b={n_b} exceeds the shortest local slab ({shortest})")
        ranges = tuple(tuple(split_even(s1 - s0, n_b)) for s0, s1 in plan.slabs)
        b_s = max(hi - lo for per_rank in ranges for lo, hi in per_rank)

    clamped = q_s > n_b
    if clamped:
        log.warning("queue size q_s=%d clamped to n_b=%d", q_s, n_b)
        q_s = n_b
    return BatchPlan(n_b=n_b, b_s=b_s, orientation=orientation, q_s=q_s,
                     ranges=ranges, queue_clamped=clamped)


@dataclass(frozen=True)
class RunPlan:
    """Всичко, което rank-овете трябва да знаят преди старт."""

    partition: PartitionPlan
    batches: BatchPlan
    assessment: OomAssessment

    @property
    def gram_mode(self):
        return self.assessment.gram_mode

    def to_dict(self):
        return {
            "partition": self.partition.to_dict(),
            "batches": self.batches.to_dict(),
            "oom": self.assessment.to_dict(),
        }
