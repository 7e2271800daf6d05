"""Accuracy, forgetting rate and average time over an accuracy matrix.

``R[i, j]`` is the test accuracy on task ``j`` after training task ``i``.
"""
import numpy as np


def _matrix(R):
    R = np.asarray(R, dtype=np.float64)
    if R.ndim != 2 or R.shape[0] != R.shape[1] or R.shape[0] < 1:
        raise ValueError(f"accuracy matrix must be square and non-empty, got shape {R.shape}")
    return R


def accuracy_metric(R):
    """Mean final-row accuracy."""
    R = _matrix(R)
    return float(R[-1].mean())


def forgetting_metric(R):
    """Mean over tasks of (best accuracy in any row - final accuracy)."""
    R = _matrix(R)
    return float((R.max(axis=0) - R[-1]).mean())


def average_time(total_seconds, n_runs):
    if n_runs < 1:
        raise ValueError("n_runs must be at least 1")
    return total_seconds / n_runs
