import pytest

from kslab.utils.pool import PoolError, ReplicaPool


def square(x):
    return x * x


@pytest.mark.parametrize("workers", [1, 2])
def test_results_in_submission_order(workers):
    seen = []
    results = ReplicaPool(workers).map(square, range(7), lambda i, r: seen.append((i, r)))
    assert results == [x * x for x in range(7)]
    assert seen == list(enumerate(results))


def test_empty_task_list():
    assert ReplicaPool(3).map(square, []) == []


def test_invalid_worker_count():
    with pytest.raises(PoolError):
        ReplicaPool(-1)
