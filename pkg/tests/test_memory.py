import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from replaybench import memory as M
from replaybench.errors import EmptyBufferError
from replaybench.nn import Batch


def items(start, n, d=2):
    ids = np.arange(start, start + n)
    return Batch(np.column_stack([ids] * d).astype(float), ids % 10)


def test_store_empty_batch_is_noop():
    buf = M.MemoryBuffer.empty(2)
    assert M.store(buf, items(0, 0), 0) is buf


def test_unbounded_append():
    buf = M.store(M.store(M.MemoryBuffer.empty(2), items(0, 100), 0), items(100, 50), 1)
    assert len(buf) == 150 and buf.seen_count == 150
    assert buf.task_ids.tolist() == [0] * 100 + [1] * 50


def test_reservoir_inclusion_is_uniform():
    # Monte Carlo: every item of a 1000-long stream kept with probability 10/1000
    counts = np.zeros(1000)
    stream = items(0, 1000, d=1)
    for seed in range(10_000):
        buf = M.store(M.MemoryBuffer.empty(1, capacity=10), stream, 0, seed)
        counts[buf.features[:, 0].astype(int)] += 1
    freq = counts / 10_000
    dev = np.abs(freq - 0.01)
    # +-0.003 is ~3 binomial sigma per item, so a few of 1000 items exceed it by chance
    assert np.mean(dev > 0.003) <= 0.01
    assert np.all(dev <= 0.005)
    # no positional bias: mean frequency of every block of 100 consecutive items
    assert np.all(np.abs(freq.reshape(10, 100).mean(1) - 0.01) <= 0.003)


def test_reservoir_uniform_across_chunked_stores():
    counts = np.zeros(60)
    for seed in range(4000):
        buf = M.MemoryBuffer.empty(1, capacity=6)
        for chunk in range(3):
            buf = M.store(buf, items(chunk * 20, 20, d=1), chunk, (seed, chunk))
        counts[buf.features[:, 0].astype(int)] += 1
    freq = counts / 4000
    assert np.all(np.abs(freq - 0.1) < 0.03)


@settings(max_examples=40)
@given(cap=st.integers(1, 20), sizes=st.lists(st.integers(0, 30), max_size=6), seed=st.integers(0, 99))
def test_capacity_never_exceeded(cap, sizes, seed):
    buf = M.MemoryBuffer.empty(2, capacity=cap)
    start = 0
    for i, n in enumerate(sizes):
        buf = M.store(buf, items(start, n), i, (seed, i))
        start += n
        assert len(buf) <= cap and buf.seen_count >= len(buf)


@settings(max_examples=30)
@given(sizes=st.lists(st.integers(0, 30), max_size=5))
def test_large_capacity_matches_unbounded(sizes):
    a, b = M.MemoryBuffer.empty(2), M.MemoryBuffer.empty(2, capacity=10_000)
    start = 0
    for i, n in enumerate(sizes):
        a, b = M.store(a, items(start, n), i), M.store(b, items(start, n), i, i)
        start += n
    assert np.array_equal(a.features, b.features) and np.array_equal(a.task_ids, b.task_ids)


def test_draw_subsample():
    buf = M.store(M.MemoryBuffer.empty(2), items(0, 20), 0)
    assert M.draw_subsample(buf, 50, 0).indices.tolist() == list(range(20))
    one = M.store(M.MemoryBuffer.empty(2), items(5, 1), 0)
    assert M.draw_subsample(one, 1, 0).indices.tolist() == [0]
    a, b = M.draw_subsample(buf, 5, 9), M.draw_subsample(buf, 5, 9)
    assert np.array_equal(a.indices, b.indices)
    assert len(set(a.indices.tolist())) == 5
    assert np.array_equal(a.batch.features, buf.features[a.indices])


def test_draw_from_empty_buffer():
    with pytest.raises(EmptyBufferError):
        M.draw_subsample(M.MemoryBuffer.empty(2), 5, 0)
