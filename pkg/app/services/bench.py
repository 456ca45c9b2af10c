# --------------------------------------------------------------
# Оркестрация на едно или серия изпълнения:
#  - plan_run   → RunPlan (partition + batches + OOM оценка), преди старт
#  - decompose  → N rank-а (нишки), TieredStore на rank, SvdFactors на rank 0
#  - sweep      → RunMetrics за всяка двойка (n_b, q_s) с q_s ≤ n_b
#  - scaling_sweep → RunMetrics по брой rank-ове (strong / weak)
#  - RunMetrics → JSON / CSV и обратно (стабилна схема)
# --------------------------------------------------------------

import csv
import json
import logging
import time
from dataclasses import dataclass, field, asdict, replace
from pathlib import Path
from typing import Optional

from ..errors import ConfigError
from .communicator import CommGroup, run_ranks
from .linalg import is_sparse
from .partition import (choose_partition, plan_batches, estimate_memory, largest_block_bytes,
                        classify_oom, RunPlan, ORIENTATIONS)
from .power_svd import SvdConfig, svd_truncated
from .tiered_store import TieredStore, HostPool

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class RunConfig:
    svd: SvdConfig = field(default_factory=SvdConfig)
    workers: int = 1
    batches: int = 1
    queue_size: int = 1
    orientation: str = "orthogonal"
    device_budget: int = 1 << 30
    transfer_cost_ns_per_byte: float = 0.0
    collective_timeout: float = 30.0
    host_dir: Optional[str] = None

    def __post_init__(self):
        if self.orientation not in ORIENTATIONS:
            raise ConfigError(f"unknown orientation {self.orientation!r}")
        if self.workers < 1 or self.batches < 1 or self.queue_size < 1:
            raise ConfigError("workers, batches and queue size must be ≥ 1")
        if self.device_budget <= 0:
            raise ConfigError(f"device budget must be positive, got {self.device_budget}")
        if self.transfer_cost_ns_per_byte < 0:
            raise ConfigError("transfer cost cannot be negative")

    @classmethod
    def from_app_config(cls, cfg, **overrides):
        """Стойности по подразбиране от Flask конфигурацията; None в overrides се игнорира."""
        overrides = {k: v for k, v in overrides.items() if v is not None}
        svd = SvdConfig(
            k=overrides.pop("k", -1),
            eps=overrides.pop("eps", cfg.get("EPS", 1e-10)),
            max_iter=overrides.pop("max_iter", cfg.get("MAX_ITER", 10_000)),
            seed=overrides.pop("seed", cfg.get("SEED", 0)),
            path=overrides.pop("path", cfg.get("PATH", "auto")),
            fixed_iters=overrides.pop("fixed_iters", None),
        )
        base = dict(
            workers=cfg.get("WORKERS", 1),
            batches=cfg.get("BATCHES", 1),
            queue_size=cfg.get("QUEUE_SIZE", 1),
            orientation=cfg.get("ORIENTATION", "orthogonal"),
            device_budget=cfg.get("DEVICE_BUDGET_BYTES", 1 << 30),
            transfer_cost_ns_per_byte=cfg.get("TRANSFER_COST_NS_PER_BYTE", 0.0),
            collective_timeout=cfg.get("COLLECTIVE_TIMEOUT_S", 30.0),
            host_dir=cfg.get("HOST_TIER_DIR"),
        )
        base.update(overrides)
        return cls(svd=svd, **base)

    def with_queue(self, batches, queue_size):
        return replace(self, batches=batches, queue_size=queue_size)

    def echo(self):
        d = asdict(self)
        d.update(d.pop("svd"))
        return d


METRIC_FIELDS = (
    "wall_time_s", "peak_device_bytes", "h2d_bytes", "d2h_bytes", "h2d_count", "d2h_count",
    "all_reduce_calls", "reduce_calls", "comm_bytes", "iterations", "converged", "sigma",
)
CONFIG_FIELDS = (
    "m", "n", "workers", "batches", "queue_size", "k", "eps", "seed", "path", "orientation",
    "device_budget", "transfer_cost_ns_per_byte", "fixed_iters", "degree", "gram_mode",
    "scaling",
)
CSV_COLUMNS = METRIC_FIELDS + CONFIG_FIELDS
SCALING_MODES = ("strong", "weak")
# колони със списъци; в CSV са разделени с ';'
_LIST_COLUMNS = {"peak_device_bytes": int, "iterations": int, "sigma": float,
                 "converged": lambda s: s == "True"}


@dataclass
class RunMetrics:
    wall_time_s: float = 0.0
    # по rank
    peak_device_bytes: list = field(default_factory=list)
    h2d_bytes: int = 0
    d2h_bytes: int = 0
    h2d_count: int = 0
    d2h_count: int = 0
    all_reduce_calls: int = 0
    reduce_calls: int = 0
    comm_bytes: int = 0
    iterations: list = field(default_factory=list)
    converged: list = field(default_factory=list)
    sigma: list = field(default_factory=list)
    config: dict = field(default_factory=dict)

    @property
    def max_peak_device_bytes(self):
        return max(self.peak_device_bytes, default=0)

    @classmethod
    def collect(cls, wall, stores, group, report, factors, config, plan):
        stats = [s.stats() for s in stores]
        comm = group.stats()
        echo = config.echo()
        echo.update(m=plan.partition.m, n=plan.partition.n, degree=plan.assessment.degree,
                    gram_mode=plan.gram_mode)
        return cls(
            wall_time_s=wall,
            peak_device_bytes=[s.peak_device_used for s in stats],
            h2d_bytes=sum(s.h2d_bytes for s in stats),
            d2h_bytes=sum(s.d2h_bytes for s in stats),
            h2d_count=sum(s.h2d_count for s in stats),
            d2h_count=sum(s.d2h_count for s in stats),
            all_reduce_calls=comm.all_reduce_calls,
            reduce_calls=comm.reduce_calls,
            comm_bytes=comm.bytes_moved,
            iterations=report.iterations,
            converged=report.converged,
            sigma=[float(s) for s in factors.sigma],
            config={k: echo.get(k) for k in CONFIG_FIELDS},
        )

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**{k: d[k] for k in METRIC_FIELDS}, config=dict(d.get("config", {})))

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2)

    @classmethod
    def from_json(cls, text):
        return cls.from_dict(json.loads(text))

    def to_row(self):
        row = {}
        for k in METRIC_FIELDS:
            value = getattr(self, k)
            row[k] = ";".join(repr(x) if isinstance(x, float) else str(x) for x in value) \
                if k in _LIST_COLUMNS else value
        for k in CONFIG_FIELDS:
            row[k] = self.config.get(k)
        return row

    @classmethod
    def from_row(cls, row):
        d = {}
        for k in METRIC_FIELDS:
            raw = row[k]
            if k in _LIST_COLUMNS:
                d[k] = [_LIST_COLUMNS[k](x) for x in raw.split(";")] if raw else []
            elif k == "wall_time_s":
                d[k] = float(raw)
            else:
                d[k] = int(raw)
        d["config"] = {k: _parse_scalar(row.get(k, "")) for k in CONFIG_FIELDS}
        return cls.from_dict(d)


def _parse_scalar(raw):
    if raw in ("", "None"):
        return None
    for cast in (int, float):
        try:
            return cast(raw)
        except ValueError:
            pass
    return raw


def write_metrics_json(path, metrics):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(metrics.to_json(), encoding="utf-8")
    return path


def read_metrics_json(path):
    return RunMetrics.from_json(Path(path).read_text(encoding="utf-8"))


def write_metrics_csv(path, rows):
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="", encoding="utf-8") as f:
        writer = csv.DictWriter(f, fieldnames=CSV_COLUMNS)
        writer.writeheader()
        for metrics in rows:
            writer.writerow(metrics.to_row())
    return path


def read_metrics_csv(path):
    with open(path, newline="", encoding="utf-8") as f:
        return [RunMetrics.from_row(row) for row in csv.DictReader(f)]


# ---------------------------------------------------------------------------
# планиране и изпълнение
# ---------------------------------------------------------------------------

def plan_run(m, n, config, *, sparse=False, density=1.0):
    """Degree 2 гърми тук, преди да тръгне който и да е rank."""
    k = config.svd.resolve_k(m, n)
    path = config.svd.path_for(sparse)
    partition = choose_partition(m, n, config.workers, k)
    batches = plan_batches(partition, config.orientation, config.batches, config.queue_size)
    if path == "dense-gram" and batches.n_b > partition.working_shape[1]:
        raise ConfigError(f"n_b={batches.n_b} exceeds the Gram axis length {partition.working_shape[1]}")
    estimate = estimate_memory(m, n, k, sparse, density)
    largest = largest_block_bytes(partition, batches, k, sparse, density,
                                  with_gram=path == "dense-gram")
    assessment = classify_oom(estimate, config.device_budget, workers=config.workers,
                              axis=partition.axis, largest_block=largest)
    return RunPlan(partition=partition, batches=batches, assessment=assessment)


@dataclass
class DecomposeResult:
    factors: object
    report: object
    metrics: RunMetrics
    plan: RunPlan


def _density(a):
    m, n = a.shape
    return a.nnz / (m * n) if is_sparse(a) else 1.0


def decompose(a, config):
    m, n = a.shape
    plan = plan_run(m, n, config, sparse=is_sparse(a), density=_density(a))
    group = CommGroup(config.workers, timeout=config.collective_timeout)
    stores = [TieredStore(config.device_budget,
                          transfer_cost_ns_per_byte=config.transfer_cost_ns_per_byte,
                          name=f"rank{r}") for r in range(config.workers)]
    pool = HostPool(config.host_dir)
    log.info("decompose %d×%d: N=%d axis=%s n_b=%d q_s=%d %s degree=%d gram=%s path=%s",
             m, n, config.workers, plan.partition.axis, plan.batches.n_b, plan.batches.q_s,
             plan.batches.orientation, plan.assessment.degree, plan.gram_mode,
             config.svd.path_for(is_sparse(a)))

    started = time.perf_counter()
    results = run_ranks(group, lambda comm: svd_truncated(a, config.svd, comm, stores[comm.rank],
                                                          plan, pool))
    wall = time.perf_counter() - started

    factors, report = results[0]
    metrics = RunMetrics.collect(wall, stores, group, report, factors, config, plan)
    log.info("decompose done in %.3fs: k=%d peak=%s B all_reduce=%d",
             wall, factors.k, metrics.peak_device_bytes, metrics.all_reduce_calls)
    return DecomposeResult(factors=factors, report=report, metrics=metrics, plan=plan)


def sweep_pairs(batches, queues):
    """(n_b, q_s) с q_s ≤ n_b; n_b отвън."""
    return [(b, q) for b in batches for q in queues if q <= b]


def sweep(a, config, batches, queues):
    pairs = sweep_pairs(batches, queues)
    if not pairs:
        raise ConfigError("the sweep has no (n_b, q_s) pair with q_s ≤ n_b")
    rows = []
    for n_b, q_s in pairs:
        result = decompose(a, config.with_queue(n_b, q_s))
        rows.append(result.metrics)
        log.info("sweep n_b=%d q_s=%d: %.3fs peak=%d B", n_b, q_s,
                 result.metrics.wall_time_s, result.metrics.max_peak_device_bytes)
    return rows


def _weak_share(a, workers, top):
    """Първите workers/top части от дългата ос: всеки rank държи един и същ slab."""
    m, n = a.shape
    long_axis = 0 if m >= n else 1
    per = a.shape[long_axis] // top
    if per < 1:
        raise ConfigError(f"{a.shape[long_axis]} rows/cols cannot be shared by {top} workers")
    end = per * workers
    if long_axis == 0:
        return a.row_slab(0, end) if is_sparse(a) else a[:end]
    return a.col_slab(0, end) if is_sparse(a) else a[:, :end]


def scaling_sweep(a, config, workers, mode="strong"):
    """
    Време спрямо броя rank-ове.
    strong: една и съща матрица за всяко N.
    weak:   матрицата расте с N (дългата ос = N·m/N_max), slab-ът на rank остава същият.
    """
    if mode not in SCALING_MODES:
        raise ConfigError(f"unknown scaling mode {mode!r}")
    if not workers or any(w < 1 for w in workers):
        raise ConfigError("the worker sweep needs positive worker counts")
    top = max(workers)
    rows = []
    for n_workers in workers:
        part = a if mode == "strong" else _weak_share(a, n_workers, top)
        metrics = decompose(part, replace(config, workers=n_workers)).metrics
        metrics.config["scaling"] = mode
        rows.append(metrics)
        log.info("scaling %s N=%d %s: %.3fs", mode, n_workers, part.shape, metrics.wall_time_s)
    return rows
