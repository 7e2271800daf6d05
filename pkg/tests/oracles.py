"""Slow reference implementations used to check the vectorised code paths."""
from itertools import combinations
import math


def brute_topk(scores, r, direction):
    """Exhaustive search for the unique r-subset that dominates its complement."""
    n = len(scores)
    r = min(r, n)
    sign = -1 if direction == "largest" else 1
    key = [(sign * scores[i], i) for i in range(n)]
    valid = []
    for combo in combinations(range(n), r):
        rest = [j for j in range(n) if j not in combo]
        if all(key[i] < key[j] for i in combo for j in rest):
            valid.append(list(combo))
    assert len(valid) == 1
    return valid[0]


def brute_coreset(points, r, initial):
    selected = [initial]
    while len(selected) < r:
        best, best_d = None, -1.0
        for j in range(len(points)):
            if j in selected:
                continue
            d = min(math.dist(points[j], points[s]) for s in selected)
            if d > best_d:
                best, best_d = j, d
        selected.append(best)
    return sorted(selected)


def accuracy_formula(R):
    T = len(R)
    return sum(R[T - 1][i] for i in range(T)) / T


def forgetting_formula(R):
    T = len(R)
    total = 0.0
    for i in range(T):
        best = max(R[k][i] for k in range(T))
        total += best - R[T - 1][i]
    return total / T
