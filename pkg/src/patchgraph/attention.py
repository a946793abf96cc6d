"""Similarity attention with percentile-based dynamic edge erasure.

Each branch projects its patch features into queries and keys with
trainable square matrices, forms the row-stochastic similarity matrix
softmax(Q K^T / sqrt(d_k)), and zeroes every entry not strictly above
the requested percentile of the flattened similarity values. The
surviving entries become the weighted adjacency fed to the graph
propagation step.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import _kernels as K
from . import ops
from .tensor import ShapeError, Tensor


@dataclass
class SimilarityParams:
    """Trainable query/key projections for one branch.

    Both matrices are square over the branch channel width; the
    scaled-dot-product denominator uses that same width as d_k.
    """

    w_q: Tensor
    w_k: Tensor

    @property
    def d_k(self) -> int:
        return self.w_q.shape[0]


def init_similarity_params(channels: int, rng: np.random.Generator) -> SimilarityParams:
    """One Xavier-uniform draw shared by w_q and w_k at init.

    Equal projections make the initial query-key form positive
    semidefinite, so mutually aligned patches start with the largest
    similarity values. Independent draws leave the form sign-indefinite
    and percentile retention starts on arbitrary pairs, which the
    erasure mask then freezes (no gradient reaches erased entries). The
    two matrices untie as soon as training updates them.
    """
    bound = math.sqrt(6.0 / (channels + channels))
    w = rng.uniform(-bound, bound, size=(channels, channels))
    return SimilarityParams(
        w_q=Tensor(w, requires_grad=True), w_k=Tensor(w.copy(), requires_grad=True)
    )


@dataclass
class ErasedAdjacency:
    """Post-erasure adjacency plus the threshold that produced it."""

    a: Tensor
    threshold: float
    percentile: float

    def nonzero_count(self) -> int:
        return int(np.count_nonzero(self.a.data))


def similarity(x: Tensor, params: SimilarityParams) -> Tensor:
    """Row-stochastic N x N similarity matrix of the patch rows of x."""
    if x.data.ndim != 2:
        raise ShapeError(f"similarity input must be N x C, got {x.shape}")
    if x.shape[1] != params.w_q.shape[0]:
        raise ShapeError(
            f"channel mismatch: input {x.shape} vs projection {params.w_q.shape}"
        )
    q = ops.matmul(x, params.w_q)
    k = ops.matmul(x, params.w_k)
    logits = ops.scale(ops.matmul(q, ops.transpose(k)), 1.0 / math.sqrt(params.d_k))
    return ops.softmax_rows(logits)


def percentile_rank(n: int, percentile: float) -> int:
    """1-based rank k = ceil(percentile% of n), 0 when percentile is 0.

    The product is rounded to 9 decimals before the ceiling so that
    mathematically integral values (e.g. 95% of 20) are not bumped up
    by float representation error.
    """
    if not 0.0 <= percentile <= 100.0:
        raise ValueError(f"percentile must be in [0, 100], got {percentile}")
    return math.ceil(round(percentile * n / 100.0, 9))


def percentile_threshold(s, percentile: float) -> float:
    """Value of the percentile-rank-th smallest entry of s.

    Flattens s, sorts ascending, and indexes with the 1-based rank from
    ``percentile_rank``. A rank of 0 (percentile 0 only) returns -inf,
    the no-erasure sentinel: nothing is strictly below every entry.
    """
    data = s.data if isinstance(s, Tensor) else np.asarray(s, dtype=np.float64)
    n = data.size
    if n < 1:
        raise ShapeError("percentile_threshold needs at least one entry")
    k = percentile_rank(n, percentile)
    if k == 0:
        return -math.inf
    flat = np.ascontiguousarray(data.reshape(-1))
    return K.kth_smallest(flat, k)


def erase(s: Tensor, percentile: float) -> ErasedAdjacency:
    """Zero all entries of s not strictly above the percentile threshold.

    The threshold is recomputed from the current values on every call,
    and the keep mask is constant with respect to backpropagation:
    gradient reaches only the retained entries.
    """
    thr = percentile_threshold(s, percentile)
    a = ops.erase_greater(s, thr)
    return ErasedAdjacency(a=a, threshold=thr, percentile=percentile)


def attention_adjacency(
    x: Tensor, params: SimilarityParams, percentile: float
) -> tuple[Tensor, ErasedAdjacency]:
    """Similarity matrix plus its erased adjacency for one branch."""
    s = similarity(x, params)
    return s, erase(s, percentile)
