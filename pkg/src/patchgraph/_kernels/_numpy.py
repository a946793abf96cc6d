"""NumPy implementations of the hot numeric kernels.

This is the fallback backend used when the compiled extension is not
available. Every function here has a signature-compatible twin in
``_core.pyx``; both operate on C-contiguous float64 arrays and return
freshly allocated outputs.
"""

import numpy as np

BACKEND_NAME = "numpy"


def matmul(a, b):
    return a @ b


def matmul_nt(a, b):
    """a @ b.T"""
    return a @ b.T


def matmul_tn(a, b):
    """a.T @ b"""
    return a.T @ b


def relu_fwd(x):
    return np.maximum(x, 0.0)


def relu_bwd(x, gy):
    return np.where(x > 0.0, gy, 0.0)


def softmax_rows_fwd(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_rows_bwd(y, gy):
    # dx = y * (gy - sum_j gy_j y_j) per row
    dot = (gy * y).sum(axis=1, keepdims=True)
    return y * (gy - dot)


def kth_smallest(flat, k):
    """k-th smallest element of a 1-D array, 1-based k in [1, n]."""
    return float(np.sort(flat, kind="stable")[k - 1])


def erase_fwd(s, thr):
    """Zero every entry not strictly above thr; returns (erased, keep mask)."""
    mask = s > thr
    return np.where(mask, s, 0.0), mask.astype(np.uint8)


def erase_bwd(gy, mask):
    return np.where(mask.astype(bool), gy, 0.0)
