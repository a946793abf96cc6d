"""Two-branch graph block: positional encoding, channel split, erased
attention adjacency per branch, graph propagation, feed-forward merge.

Per block: the learnable positional encoding is added once to the full
N x C input, the result is split channel-wise into two halves, each
half builds its own erased adjacency and propagates through its graph
weight, and the concatenated branch outputs pass through a two-layer
perceptron (ReLU between layers) back to N x C. No residual connection
by default; a flag exists for experimentation.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from . import ops
from .attention import SimilarityParams, attention_adjacency, init_similarity_params
from .tensor import ShapeError, Tensor


@dataclass
class BlockParams:
    p_pos: Tensor
    branch_a: SimilarityParams
    branch_b: SimilarityParams
    w_gn_a: Tensor
    w_gn_b: Tensor
    ffd_w1: Tensor
    ffd_b1: Tensor
    ffd_w2: Tensor
    ffd_b2: Tensor


def _xavier(rng: np.random.Generator, fan_in: int, fan_out: int, shape) -> Tensor:
    bound = math.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_block_params(
    n_patches: int, channels: int, ffd_hidden: int, rng: np.random.Generator
) -> BlockParams:
    if channels % 2 != 0:
        raise ShapeError(f"block channel count must be even, got {channels}")
    half = channels // 2
    return BlockParams(
        p_pos=Tensor(rng.normal(0.0, 0.02, size=(n_patches, channels)), requires_grad=True),
        branch_a=init_similarity_params(half, rng),
        branch_b=init_similarity_params(half, rng),
        w_gn_a=_xavier(rng, half, half, (half, half)),
        w_gn_b=_xavier(rng, half, half, (half, half)),
        ffd_w1=_xavier(rng, channels, ffd_hidden, (channels, ffd_hidden)),
        ffd_b1=Tensor(np.zeros(ffd_hidden), requires_grad=True),
        ffd_w2=_xavier(rng, ffd_hidden, channels, (ffd_hidden, channels)),
        ffd_b2=Tensor(np.zeros(channels), requires_grad=True),
    )


def add_positional(x: Tensor, p_pos: Tensor) -> Tensor:
    if x.shape != p_pos.shape:
        raise ShapeError(f"positional encoding {p_pos.shape} does not match input {x.shape}")
    return ops.add(x, p_pos)


def graph_propagate(h: Tensor, a: Tensor, w: Tensor) -> Tensor:
    """One aggregation step: ReLU(A @ H @ W^T).

    Row i sums A[i, j] * W @ h_j over exactly the nonzero columns j of
    A's row i; rows isolated by erasure come out as the zero vector.
    """
    if h.data.ndim != 2 or a.data.ndim != 2 or w.data.ndim != 2:
        raise ShapeError("graph_propagate wants 2-D h, a, w")
    n = h.shape[0]
    if a.shape != (n, n):
        raise ShapeError(f"adjacency {a.shape} does not match {n} nodes")
    if w.shape[0] != w.shape[1] or w.shape[0] != h.shape[1]:
        raise ShapeError(f"graph weight {w.shape} does not match features {h.shape}")
    return ops.relu(ops.matmul(ops.matmul(a, h), ops.transpose(w)))


def block_forward(
    x: Tensor,
    params: BlockParams,
    percentile: float,
    residual: bool = False,
    trace: list | None = None,
) -> Tensor:
    """N x C in, N x C out."""
    if x.data.ndim != 2:
        raise ShapeError(f"block input must be N x C, got {x.shape}")
    if x.shape[1] % 2 != 0:
        raise ShapeError(f"block needs an even channel count, got {x.shape[1]}")
    xin = add_positional(x, params.p_pos)
    half_a, half_b = ops.split_channels(xin, 2)

    branch_outs = []
    branch_trace = {}
    for label, half, sim_params, w_gn in (
        ("a", half_a, params.branch_a, params.w_gn_a),
        ("b", half_b, params.branch_b, params.w_gn_b),
    ):
        s, adj = attention_adjacency(half, sim_params, percentile)
        out = graph_propagate(half, adj.a, w_gn)
        branch_outs.append(out)
        if trace is not None:
            branch_trace[label] = {
                "similarity": s.data.copy(),
                "threshold": adj.threshold,
                "adjacency": adj.a.data.copy(),
                "nonzeros": adj.nonzero_count(),
                "output": out.data.copy(),
            }

    merged = ops.concat_channels(branch_outs)
    hidden = ops.relu(ops.add_rowvec(ops.matmul(merged, params.ffd_w1), params.ffd_b1))
    y = ops.add_rowvec(ops.matmul(hidden, params.ffd_w2), params.ffd_b2)
    if residual:
        y = ops.add(y, x)
    if trace is not None:
        trace.append({"branches": branch_trace, "output": y.data.copy()})
    return y


def stack_forward(
    x: Tensor,
    blocks: list[BlockParams],
    percentile: float,
    residual: bool = False,
    trace: list | None = None,
) -> Tensor:
    if not blocks:
        raise ShapeError("stack_forward needs at least one block")
    y = x
    for params in blocks:
        y = block_forward(y, params, percentile, residual=residual, trace=trace)
    return y
