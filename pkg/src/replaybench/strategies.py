"""Replay-sample scoring and selection.

Prediction-based scores (confidence, entropy, margin, BALD) and the
interference score all produce one number per subsample row; a top-k pick in
the direction given by :data:`DIRECTION` turns them into a selection.
Embedding strategies (k-means, max-min coreset) work directly on hidden
activations. All selections are indices into the subsample.
"""
from dataclasses import dataclass

import numpy as np

from . import nn
from .seeding import make_rng

STRATEGIES = ("random", "entropy", "confidence", "margin", "bald", "kmeans", "coreset", "mir")
MODES = ("simple", "difficult")

# which tail of each score counts as "simple" replay data
DIRECTION = {
    "confidence": {"simple": "largest", "difficult": "smallest"},
    "entropy": {"simple": "smallest", "difficult": "largest"},
    "margin": {"simple": "largest", "difficult": "smallest"},
    "bald": {"simple": "smallest", "difficult": "largest"},
    "mir": {"simple": "largest", "difficult": "largest"},
}


@dataclass(frozen=True)
class Selection:
    indices: np.ndarray

    def __len__(self):
        return self.indices.size

    def resolve(self, batch):
        return batch.take(self.indices)


def _selection(idx):
    return Selection(np.sort(np.asarray(idx, dtype=np.int64)))


def _rows(preds):
    p = np.asarray(preds, dtype=np.float64)
    return p.reshape(0, 0) if p.size == 0 else p


def _entropy(p):
    safe = np.where(p > 0, p, 1.0)
    return -np.sum(np.where(p > 0, p * np.log(safe), 0.0), axis=-1)


def score_confidence(preds):
    p = _rows(preds)
    return p.max(axis=1) if p.shape[0] else np.zeros(0)


def score_entropy(preds):
    p = _rows(preds)
    return _entropy(p) if p.shape[0] else np.zeros(0)


def score_margin(preds):
    """Largest minus smallest class probability (not top-1 minus top-2)."""
    p = _rows(preds)
    return p.max(axis=1) - p.min(axis=1) if p.shape[0] else np.zeros(0)


def score_bald(mc_preds):
    """Entropy of the mean prediction minus mean entropy over the passes."""
    stack = [np.asarray(m, dtype=np.float64) for m in mc_preds]
    if not stack:
        raise ValueError("score_bald needs at least one pass")
    if any(m.shape != stack[0].shape for m in stack):
        raise ValueError("all passes must have the same shape")
    stack = np.stack(stack)
    if stack.shape[1] == 0:
        return np.zeros(0)
    return _entropy(stack.mean(axis=0)) - _entropy(stack).mean(axis=0)


def score_mir(current, virtual, batch):
    """Per-sample loss increase under the virtually updated parameters."""
    if current.layer_shapes != virtual.layer_shapes:
        raise ValueError("current and virtual models differ in architecture")
    if len(batch) == 0:
        return np.zeros(0)
    return nn.per_sample_loss(virtual, batch) - nn.per_sample_loss(current, batch)


def select_topk(scores, n_replay, direction="largest"):
    """Indices of the ``n_replay`` extreme scores; lower index wins ties."""
    s = np.asarray(scores, dtype=np.float64)
    if n_replay < 0:
        raise ValueError("n_replay must be non-negative")
    if direction == "largest":
        order = np.argsort(-s, kind="stable")
    elif direction == "smallest":
        order = np.argsort(s, kind="stable")
    else:
        raise ValueError(f"direction must be 'largest' or 'smallest', got {direction!r}")
    return _selection(order[:n_replay])


def select_random(n_subsample, n_replay, seed):
    if n_replay >= n_subsample:
        return _selection(np.arange(n_subsample))
    return _selection(make_rng(seed).choice(n_subsample, n_replay, replace=False))


def _sq_dists(points, centers):
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=-1)


def _kmeans_pp(emb, k, rng):
    n = emb.shape[0]
    chosen = [int(rng.integers(n))]
    d2 = _sq_dists(emb, emb[chosen]).min(axis=1)
    while len(chosen) < k:
        total = d2.sum()
        if total > 0:
            nxt = int(rng.choice(n, p=d2 / total))
        else:
            nxt = int(rng.choice(np.setdiff1d(np.arange(n), chosen)))
        chosen.append(nxt)
        d2 = np.minimum(d2, _sq_dists(emb, emb[[nxt]])[:, 0])
    return emb[chosen].copy()


def kmeans(emb, k, seed, max_iters=50):
    """Lloyd's algorithm from k-means++ seeding. Returns ``(centers, assignment)``."""
    emb = np.asarray(emb, dtype=np.float64)
    rng = make_rng(seed)
    centers = _kmeans_pp(emb, k, rng)
    assign = None
    for _ in range(max_iters):
        new_assign = _sq_dists(emb, centers).argmin(axis=1)
        for c in range(k):
            if not np.any(new_assign == c):
                # empty cluster: move it to the point farthest from every center
                far = int(_sq_dists(emb, centers).min(axis=1).argmax())
                centers[c] = emb[far]
                new_assign = _sq_dists(emb, centers).argmin(axis=1)
        if assign is not None and np.array_equal(assign, new_assign):
            break
        assign = new_assign
        for c in range(k):
            members = assign == c
            if members.any():
                centers[c] = emb[members].mean(axis=0)
    assign = _sq_dists(emb, centers).argmin(axis=1)
    return centers, assign


def select_kmeans(emb, n_replay, seed, max_iters=50):
    """From each of ``n_replay`` clusters keep the member nearest its centroid."""
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if n_replay > n:
        raise ValueError(f"cannot pick {n_replay} from {n} embeddings")
    if n_replay == 0:
        return _selection([])
    centers, assign = kmeans(emb, n_replay, seed, max_iters)
    d2 = _sq_dists(emb, centers)
    picked = []
    taken = np.zeros(n, dtype=bool)
    for c in range(n_replay):
        members = np.flatnonzero(assign == c)
        if members.size == 0:
            # duplicate points can leave a cluster empty; fall back to the nearest free row
            members = np.flatnonzero(~taken)
        best = members[np.argmin(d2[members, c])]
        picked.append(int(best))
        taken[best] = True
    return _selection(picked)


def select_coreset(emb, n_replay, seed, initial=None):
    """Greedy max-min distance (k-center) selection from a random start."""
    emb = np.asarray(emb, dtype=np.float64)
    n = emb.shape[0]
    if n_replay > n:
        raise ValueError(f"cannot pick {n_replay} from {n} embeddings")
    if n_replay == 0:
        return _selection([])
    first = int(make_rng(seed).integers(n)) if initial is None else int(initial)
    picked = [first]
    min_d = np.sqrt(((emb - emb[first]) ** 2).sum(axis=1))
    min_d[first] = -np.inf
    while len(picked) < n_replay:
        nxt = int(np.argmax(min_d))
        picked.append(nxt)
        min_d = np.minimum(min_d, np.sqrt(((emb - emb[nxt]) ** 2).sum(axis=1)))
        min_d[picked] = -np.inf
    return _selection(picked)


def direction_for(strategy, mode):
    if mode not in MODES:
        raise ValueError(f"mode must be one of {MODES}")
    return DIRECTION[strategy][mode]
