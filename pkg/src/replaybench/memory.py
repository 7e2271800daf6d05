"""Experience-replay buffer with optional reservoir-sampled capacity."""
from dataclasses import dataclass, replace

import numpy as np

from .errors import EmptyBufferError
from .nn import Batch
from .seeding import make_rng


@dataclass(frozen=True)
class MemoryBuffer:
    features: np.ndarray
    labels: np.ndarray
    task_ids: np.ndarray
    capacity: int | None = None     # None means unbounded
    seen_count: int = 0

    @classmethod
    def empty(cls, dim, capacity=None):
        if capacity is not None and capacity < 1:
            raise ValueError("capacity must be positive or None")
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), capacity, 0)

    def __len__(self):
        return self.labels.shape[0]

    def as_batch(self):
        return Batch(self.features, self.labels)


@dataclass(frozen=True)
class Subsample:
    indices: np.ndarray
    batch: Batch
    task_ids: np.ndarray

    def __len__(self):
        return len(self.batch)


def store(buffer, batch, source_task_id, seed=0):
    """Return a new buffer holding ``batch`` (reservoir sampling when bounded)."""
    n = len(batch)
    if n == 0:
        return buffer
    tags = np.full(n, int(source_task_id), dtype=np.int64)
    if buffer.capacity is None:
        return replace(
            buffer,
            features=np.concatenate([buffer.features, batch.features]),
            labels=np.concatenate([buffer.labels, batch.labels]),
            task_ids=np.concatenate([buffer.task_ids, tags]),
            seen_count=buffer.seen_count + n,
        )

    cap = buffer.capacity
    x, y, t = buffer.features.copy(), buffer.labels.copy(), buffer.task_ids.copy()
    # fill free slots first
    free = min(cap - len(buffer), n)
    if free > 0:
        x = np.concatenate([x, batch.features[:free]])
        y = np.concatenate([y, batch.labels[:free]])
        t = np.concatenate([t, tags[:free]])
    rest = np.arange(free, n)
    if rest.size:
        rng = make_rng(seed)
        # item with lifetime position p survives iff a uniform draw from [0, p] lands < cap
        positions = buffer.seen_count + rest
        draws = rng.integers(0, positions + 1)
        for i, slot in zip(rest[draws < cap], draws[draws < cap]):
            x[slot], y[slot], t[slot] = batch.features[i], batch.labels[i], tags[i]
    return replace(buffer, features=x, labels=y, task_ids=t, seen_count=buffer.seen_count + n)


def draw_subsample(buffer, n_subsample, seed):
    """Pick ``min(n_subsample, len(buffer))`` distinct slots uniformly at random."""
    size = len(buffer)
    if size == 0:
        raise EmptyBufferError("cannot subsample an empty buffer")
    k = min(int(n_subsample), size)
    if k == size:
        idx = np.arange(size)
    else:
        idx = np.sort(make_rng(seed).choice(size, k, replace=False))
    return Subsample(idx, Batch(buffer.features[idx], buffer.labels[idx]), buffer.task_ids[idx])
