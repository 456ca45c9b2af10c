# tests/test_communicator.py
import logging

import numpy as np
import pytest

from app.errors import ConfigError, CollectiveError, CollectiveTimeout, CollectiveAborted
from app.services.communicator import CommGroup, run_ranks

log = logging.getLogger(__name__)


def test_all_reduce_examples(ranks):
    log.info("Проверка: all_reduce_sum за N=2, N=1 и N=4")
    bufs = [np.array([1.0, 2.0]), np.array([3.0, 4.0])]
    _, out = ranks(2, lambda c: c.all_reduce_sum(bufs[c.rank]))
    assert all(np.array_equal(o, [4, 6]) for o in out)

    _, out = ranks(1, lambda c: c.all_reduce_sum(np.array([5.0, 7.0])))
    assert np.array_equal(out[0], [5, 7])

    _, out = ranks(4, lambda c: c.all_reduce_sum(c.rank * np.ones(3)))
    assert all(np.array_equal(o, [6, 6, 6]) for o in out)
    log.info("ОК: всички rank-ове получават сумата")


def test_reduce_only_root_receives(ranks):
    _, out = ranks(2, lambda c: c.reduce_sum(np.array([float(c.rank + 1)]), root=1))
    assert np.array_equal(out[1], [3.0])
    assert np.array_equal(out[0], [1.0])

    _, out = ranks(1, lambda c: c.reduce_sum(np.array([2.0]), root=0))
    assert np.array_equal(out[0], [2.0])


def test_reduce_root_out_of_range(ranks):
    with pytest.raises(ConfigError):
        ranks(2, lambda c: c.reduce_sum(np.ones(1), root=2))


def test_shape_mismatch_is_collective_error(ranks):
    with pytest.raises(CollectiveError):
        ranks(2, lambda c: c.all_reduce_sum(np.ones(2 + c.rank)))


def test_missing_participant_times_out():
    log.info("Проверка: липсващ rank → CollectiveTimeout вместо зависване")
    group = CommGroup(2, timeout=0.2)

    def target(comm):
        if comm.rank == 0:
            comm.barrier()
        return comm.rank

    with pytest.raises(CollectiveTimeout):
        run_ranks(group, target)
    log.info("ОК: timeout след 0.2 s")


def test_barrier_all_return(ranks):
    group, out = ranks(3, lambda c: (c.barrier(), c.rank)[1])
    assert out == [0, 1, 2]
    assert group.stats().barrier_calls == 1
    _, single = ranks(1, lambda c: c.barrier())
    assert single == [None]


def test_all_reduce_equals_reduce_at_root_and_is_deterministic(ranks, rng):
    data = [rng.standard_normal(17) for _ in range(4)]

    def target(comm):
        a = comm.all_reduce_sum(data[comm.rank])
        r = comm.reduce_sum(data[comm.rank], root=2)
        return a, r

    _, first = ranks(4, target)
    _, second = ranks(4, target)
    assert np.array_equal(first[0][0], first[2][1])
    for (a1, _), (a2, _) in zip(first, second):
        assert np.array_equal(a1, a2)


def test_counters(ranks):
    payload = np.ones(10)

    def target(comm):
        for _ in range(3):
            comm.all_reduce_sum(payload)
        comm.reduce_sum(payload, root=0)

    group, _ = ranks(2, target)
    stats = group.stats()
    assert stats.all_reduce_calls == 3
    assert stats.reduce_calls == 1
    assert stats.bytes_moved >= 4 * payload.nbytes


def test_abort_wakes_waiting_ranks_with_aborted():
    group = CommGroup(1, timeout=5.0)
    group.abort()
    with pytest.raises(CollectiveAborted):
        group.handle(0).barrier()


def test_run_ranks_raises_the_failing_rank_error():
    log.info("Проверка: грешка в rank 1 излиза навън, а не abort-а на rank 0")
    group = CommGroup(2, timeout=5.0)

    def target(comm):
        if comm.rank == 1:
            raise CollectiveError("transfer aborted by the user")
        comm.barrier()

    with pytest.raises(CollectiveError) as info:
        run_ranks(group, target)
    assert not isinstance(info.value, CollectiveAborted)
    assert str(info.value) == "transfer aborted by the user"

    group = CommGroup(2, timeout=5.0)

    def failing(comm):
        if comm.rank == 0:
            raise ValueError("bad slab")
        comm.barrier()

    with pytest.raises(ValueError):
        run_ranks(group, failing)
    log.info("ОК: вдига се истинската грешка")
