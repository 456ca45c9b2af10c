# tests/test_gram.py
import logging

import numpy as np
import pytest

from app.errors import ConfigError, ShapeError
from app.services.gram import dist_gram, gram_matvec, gram_tasks
from app.services.linalg import CsrMatrix
from app.services.partition import split_even
from app.services.tiered_store import TieredStore
from conftest import make_plans, run_on_ranks

log = logging.getLogger(__name__)


def _slab_gram(a, workers, n_b, q_s, mode="replicated", sparse=False, budget=1 << 20):
    m, n = a.shape
    _, plan = make_plans(m, n, workers=workers, batches=n_b, queue_size=q_s)
    stores = [TieredStore(budget, name=f"rank{r}") for r in range(workers)]

    def target(comm):
        r0, r1 = plan.partition.slab(comm.rank)
        x = CsrMatrix.from_dense(a).row_slab(r0, r1) if sparse else a[r0:r1]
        return dist_gram(x, plan.batches, comm, stores[comm.rank], mode=mode)

    group, results = run_on_ranks(workers, target)
    return group, stores, results


def test_gram_task_order_and_count():
    tasks = gram_tasks(4, 2)
    assert len(tasks) == 10
    assert [(t.i, t.j) for t in tasks[:4]] == [(0, 0), (0, 1), (1, 1), (0, 2)]
    assert all(t.i <= t.j for t in tasks)
    assert [t.slot for t in tasks[:4]] == [0, 1, 0, 1]
    assert len(gram_tasks(1, 1)) == 1


@pytest.mark.parametrize("workers", [1, 2, 3])
@pytest.mark.parametrize("n_b,q_s", [(1, 1), (2, 1), (3, 2), (4, 4)])
def test_replicated_gram_equals_full_product(rng, workers, n_b, q_s):
    log.info("Проверка: реплицирано B = AᵀA при N=%d, n_b=%d, q_s=%d", workers, n_b, q_s)
    a = rng.standard_normal((18, 8))
    expected = a.T @ a
    group, stores, results = _slab_gram(a, workers, n_b, q_s)

    for gram, store in zip(results, stores):
        assert np.allclose(gram.matrix, expected, atol=1e-12)
        assert np.allclose(gram.matrix, gram.matrix.T, atol=1e-12)
        assert gram.max_active <= q_s
        assert all(t.state == "done" for t in gram.tasks)
        gram.release(store)
        assert store.stats().device_used == 0
    assert group.stats().all_reduce_calls == n_b * (n_b + 1) // 2
    log.info("ОК: всички rank-ове имат еднакво симетрично B")


def test_identity_and_example_grams(ranks):
    store = TieredStore(1 << 16)
    _, plan = make_plans(3, 3, batches=1)
    _, out = ranks(1, lambda c: dist_gram(np.eye(3), plan.batches, c, store))
    assert np.array_equal(out[0].matrix, np.eye(3))

    store = TieredStore(1 << 16)
    _, plan = make_plans(2, 2, batches=2)
    a = np.array([[1.0, 2.0], [3.0, 4.0]])
    _, out = ranks(1, lambda c: dist_gram(a, plan.batches, c, store))
    assert np.array_equal(out[0].matrix, [[10, 14], [14, 20]])


def test_resident_column_batch_is_fetched_once():
    a = np.arange(40, dtype=np.float64).reshape(10, 4)
    _, stores, results = _slab_gram(a, 1, 4, 1)
    # A_j остава на device за цялата си колона → по едно H2D на задача
    assert stores[0].stats().h2d_count == 4 * 5 // 2


@pytest.mark.parametrize("workers", [2, 3])
@pytest.mark.parametrize("n_b", [1, 3, 4])
def test_distributed_gram_row_slabs(rng, workers, n_b):
    log.info("Проверка: distributed B, всеки rank държи своите редове на host")
    a = rng.standard_normal((15, 7))
    expected = a.T @ a
    group, stores, results = _slab_gram(a, workers, n_b, 2, mode="distributed")
    owners = split_even(7, workers)

    parts = []
    for rank, gram in enumerate(results):
        r0, r1 = owners[rank]
        assert gram.row_range == (r0, r1)
        assert np.allclose(gram.matrix, expected[r0:r1], atol=1e-12)
        parts.append(gram.matrix)
        assert stores[rank].stats().device_used == 0
    assert np.allclose(np.vstack(parts), expected, atol=1e-12)
    assert group.stats().all_reduce_calls == 0
    assert group.stats().reduce_calls >= n_b * (n_b + 1) // 2


def test_sparse_input_gram(rng):
    a = rng.standard_normal((12, 6)) * (rng.random((12, 6)) < 0.3)
    _, stores, results = _slab_gram(a, 2, 3, 2, sparse=True)
    assert np.allclose(results[0].matrix, a.T @ a, atol=1e-12)


def test_gram_matvec_replicated_and_distributed(rng):
    a = rng.standard_normal((16, 6))
    v = rng.standard_normal(6)
    expected = a.T @ (a @ v)

    _, stores, results = _slab_gram(a, 2, 2, 1)
    assert np.allclose(gram_matvec(results[0], v), expected, atol=1e-10)

    _, plan = make_plans(16, 6, workers=2, batches=3)

    def target(comm):
        store = TieredStore(1 << 16)
        r0, r1 = plan.partition.slab(comm.rank)
        gram = dist_gram(a[r0:r1], plan.batches, comm, store, mode="distributed")
        through_store = gram_matvec(gram, v, comm, store)
        direct = gram_matvec(gram, v, comm)
        return through_store, direct, store.stats().device_used

    _, out = run_on_ranks(2, target)
    for through_store, direct, used in out:
        assert np.allclose(through_store, expected, atol=1e-10)
        assert np.allclose(through_store, direct, atol=1e-12)
        assert used == 0


def test_gram_input_errors(ranks):
    store = TieredStore(1 << 16)
    _, plan = make_plans(8, 4, batches=4)
    with pytest.raises(ConfigError):
        ranks(1, lambda c: dist_gram(np.ones((8, 3)), plan.batches, c, store))
    with pytest.raises(ShapeError):
        ranks(1, lambda c: dist_gram(np.ones(8), plan.batches, c, store))
    with pytest.raises(ConfigError):
        ranks(1, lambda c: dist_gram(np.ones((8, 4)), plan.batches, c, store, mode="ring"))

    _, plan = make_plans(8, 4, batches=1)
    _, out = ranks(1, lambda c: dist_gram(np.ones((8, 4)), plan.batches, c, TieredStore(1 << 16)))
    with pytest.raises(ShapeError):
        gram_matvec(out[0], np.ones(3))


@pytest.mark.parametrize("workers", [1, 2, 4])
@pytest.mark.parametrize("q_s", [1, 2])
def test_four_batches_run_ten_tasks(rng, workers, q_s):
    a = rng.standard_normal((32, 24))
    _, stores, results = _slab_gram(a, workers, 4, q_s)
    for gram, store in zip(results, stores):
        assert len(gram.tasks) == 10
        assert store.stats().h2d_count < 2 * 4 * 4
        assert np.allclose(gram.matrix, a.T @ a, atol=1e-10)


@pytest.mark.parametrize("workers", [2, 3])
def test_distributed_gram_tile_shared_by_several_owners(rng, workers):
    log.info("Проверка: плочка с редове на няколко owner-а се сумира точно веднъж")
    a = rng.standard_normal((16, 8))
    group, stores, results = _slab_gram(a, workers, 1, 1, mode="distributed")
    assert np.allclose(np.vstack([g.matrix for g in results]), a.T @ a, atol=1e-12)
    assert group.stats().reduce_calls == workers
    assert all(g.lane_counts == [1] for g in results)

    v = rng.standard_normal(8)
    _, out = run_on_ranks(workers, lambda c: gram_matvec(results[c.rank], v, c))
    for bv in out:
        assert np.allclose(bv, a.T @ (a @ v), atol=1e-10)
