"""Differentiable operations over ``Tensor``.

Every op follows the same pattern: validate shapes, run the forward
kernel, wrap the result, and (when a tape is active and the result
requires grad) record a closure that accumulates input gradients from
the output gradient. Closures skip silently when the output never
received a gradient (a branch not reaching the loss).
"""

from __future__ import annotations

import numpy as np

from . import _kernels as K
from .tensor import GradientError, ShapeError, Tape, Tensor


def _result(data, *inputs: Tensor) -> Tensor:
    out = Tensor(data)
    out.requires_grad = any(t.requires_grad for t in inputs)
    return out


def _record(out: Tensor, fn) -> None:
    tape = Tape.current()
    if tape is not None and out.requires_grad:
        tape.record(fn)


def _require_2d(t: Tensor, name: str) -> None:
    if t.data.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {t.shape}")


# ---------------------------------------------------------------------------
# linear algebra


def matmul(a: Tensor, b: Tensor) -> Tensor:
    _require_2d(a, "matmul lhs")
    _require_2d(b, "matmul rhs")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul inner extents differ: {a.shape} x {b.shape}")
    out = _result(K.matmul(a.data, b.data), a, b)

    def bwd():
        if out.grad is None:
            return
        a.accumulate_grad(K.matmul_nt(out.grad, b.data))
        b.accumulate_grad(K.matmul_tn(a.data, out.grad))

    _record(out, bwd)
    return out


def transpose(x: Tensor) -> Tensor:
    _require_2d(x, "transpose input")
    out = _result(np.ascontiguousarray(x.data.T), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(np.ascontiguousarray(out.grad.T))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# elementwise


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"add shapes differ: {a.shape} vs {b.shape}")
    out = _result(a.data + b.data, a, b)

    def bwd():
        if out.grad is None:
            return
        a.accumulate_grad(out.grad)
        b.accumulate_grad(out.grad)

    _record(out, bwd)
    return out


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"sub shapes differ: {a.shape} vs {b.shape}")
    out = _result(a.data - b.data, a, b)

    def bwd():
        if out.grad is None:
            return
        a.accumulate_grad(out.grad)
        b.accumulate_grad(-out.grad)

    _record(out, bwd)
    return out


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise ShapeError(f"mul shapes differ: {a.shape} vs {b.shape}")
    out = _result(a.data * b.data, a, b)

    def bwd():
        if out.grad is None:
            return
        a.accumulate_grad(out.grad * b.data)
        b.accumulate_grad(out.grad * a.data)

    _record(out, bwd)
    return out


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    out = _result(x.data * c, x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(out.grad * c)

    _record(out, bwd)
    return out


def add_scalar(x: Tensor, c: float) -> Tensor:
    out = _result(x.data + float(c), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(out.grad)

    _record(out, bwd)
    return out


def relu(x: Tensor) -> Tensor:
    # Subgradient at exactly 0 is 0.
    out = _result(K.relu_fwd(x.data), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(K.relu_bwd(x.data, out.grad))

    _record(out, bwd)
    return out


def sqrt(x: Tensor) -> Tensor:
    """Elementwise square root; caller guarantees non-negative input."""
    y = np.sqrt(x.data)
    out = _result(y, x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(out.grad * 0.5 / y)

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# reductions & reshaping


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    _require_2d(x, "mean_over_axis input")
    if axis not in (0, 1):
        raise ShapeError(f"mean_over_axis axis must be 0 or 1, got {axis}")
    extent = x.shape[axis]
    out = _result(x.data.mean(axis=axis), x)

    def bwd():
        if out.grad is None:
            return
        g = out.grad / extent
        x.accumulate_grad(np.broadcast_to(g[None, :] if axis == 0 else g[:, None], x.shape).copy())

    _record(out, bwd)
    return out


def sum_all(x: Tensor) -> Tensor:
    out = _result(np.asarray(x.data.sum()), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(np.full_like(x.data, float(out.grad)))

    _record(out, bwd)
    return out


def mean_all(x: Tensor) -> Tensor:
    n = x.size
    out = _result(np.asarray(x.data.mean()), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(np.full_like(x.data, float(out.grad) / n))

    _record(out, bwd)
    return out


def reshape(x: Tensor, shape) -> Tensor:
    shape = tuple(int(s) for s in shape)
    if int(np.prod(shape, dtype=np.int64)) != x.size:
        raise ShapeError(f"cannot reshape {x.shape} to {shape}")
    out = _result(x.data.reshape(shape), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(out.grad.reshape(x.shape))

    _record(out, bwd)
    return out


def concat(tensors, axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat needs at least one tensor")
    for t in tensors:
        _require_2d(t, "concat input")
    if axis not in (0, 1):
        raise ShapeError(f"concat axis must be 0 or 1, got {axis}")
    out = Tensor(np.concatenate([t.data for t in tensors], axis=axis))
    out.requires_grad = any(t.requires_grad for t in tensors)
    offsets = np.cumsum([0] + [t.shape[axis] for t in tensors])

    def bwd():
        if out.grad is None:
            return
        for t, lo, hi in zip(tensors, offsets[:-1], offsets[1:]):
            piece = out.grad[lo:hi] if axis == 0 else out.grad[:, lo:hi]
            t.accumulate_grad(np.ascontiguousarray(piece))

    _record(out, bwd)
    return out


def concat_channels(tensors) -> Tensor:
    """Concatenate N x Ci blocks along the channel (column) axis."""
    return concat(tensors, axis=1)


def slice_cols(x: Tensor, lo: int, hi: int) -> Tensor:
    _require_2d(x, "slice_cols input")
    out = _result(np.ascontiguousarray(x.data[:, lo:hi]), x)

    def bwd():
        if out.grad is None:
            return
        g = np.zeros_like(x.data)
        g[:, lo:hi] = out.grad
        x.accumulate_grad(g)

    _record(out, bwd)
    return out


def split_channels(x: Tensor, parts: int = 2):
    """Split N x C column-wise into ``parts`` equal N x (C/parts) tensors."""
    _require_2d(x, "split_channels input")
    c = x.shape[1]
    if c % parts != 0:
        raise ShapeError(f"cannot split {c} channels into {parts} equal parts")
    width = c // parts
    return [slice_cols(x, i * width, (i + 1) * width) for i in range(parts)]


def slice_axis0(x: Tensor, i: int) -> Tensor:
    """x[i] for a rank >= 2 tensor; backward scatters into slot i."""
    out = _result(np.ascontiguousarray(x.data[i]), x)

    def bwd():
        if out.grad is None:
            return
        g = np.zeros_like(x.data)
        g[i] = out.grad
        x.accumulate_grad(g)

    _record(out, bwd)
    return out


def stack_rows(tensors) -> Tensor:
    """Stack 1-D tensors of equal length into a matrix, one per row."""
    out = Tensor(np.stack([t.data for t in tensors], axis=0))
    out.requires_grad = any(t.requires_grad for t in tensors)

    def bwd():
        if out.grad is None:
            return
        for i, t in enumerate(tensors):
            t.accumulate_grad(out.grad[i].copy())

    _record(out, bwd)
    return out


def gather_pairs(x: Tensor, rows, cols) -> Tensor:
    """Vector of x[rows[k], cols[k]]; backward scatter-adds."""
    _require_2d(x, "gather_pairs input")
    rows = np.asarray(rows, dtype=np.intp)
    cols = np.asarray(cols, dtype=np.intp)
    out = _result(x.data[rows, cols].copy(), x)

    def bwd():
        if out.grad is None:
            return
        g = np.zeros_like(x.data)
        np.add.at(g, (rows, cols), out.grad)
        x.accumulate_grad(g)

    _record(out, bwd)
    return out


def add_rowvec(x: Tensor, v: Tensor) -> Tensor:
    """Add a length-C vector to every row of a B x C matrix."""
    _require_2d(x, "add_rowvec input")
    if v.data.ndim != 1 or v.shape[0] != x.shape[1]:
        raise ShapeError(f"row vector shape {v.shape} does not match columns of {x.shape}")
    out = _result(x.data + v.data[None, :], x, v)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(out.grad)
        v.accumulate_grad(out.grad.sum(axis=0))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# softmax family


def softmax_rows(x: Tensor) -> Tensor:
    """Row-wise softmax with per-row max subtraction for stability."""
    _require_2d(x, "softmax_rows input")
    y = K.softmax_rows_fwd(x.data)
    out = _result(y, x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(K.softmax_rows_bwd(y, out.grad))

    _record(out, bwd)
    return out


def log_softmax_rows(x: Tensor) -> Tensor:
    _require_2d(x, "log_softmax_rows input")
    shifted = x.data - x.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    y = shifted - lse
    out = _result(y, x)

    def bwd():
        if out.grad is None:
            return
        soft = np.exp(y)
        x.accumulate_grad(out.grad - soft * out.grad.sum(axis=1, keepdims=True))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# masking


def erase_greater(x: Tensor, threshold: float) -> Tensor:
    """Keep entries strictly above threshold, zero the rest.

    The keep mask is captured at forward time and treated as constant
    during backward: gradient flows only through retained entries.
    """
    _require_2d(x, "erase_greater input")
    a, mask = K.erase_fwd(x.data, float(threshold))
    out = _result(a, x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(K.erase_bwd(out.grad, mask))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# pairwise distances


def pairwise_sqdist(e: Tensor) -> Tensor:
    """B x B matrix of squared Euclidean distances between rows of e."""
    _require_2d(e, "pairwise_sqdist input")
    diff = e.data[:, None, :] - e.data[None, :, :]
    d2 = np.einsum("ijc,ijc->ij", diff, diff)
    out = _result(d2, e)

    def bwd():
        if out.grad is None:
            return
        h = out.grad + out.grad.T
        e.accumulate_grad(2.0 * (h.sum(axis=1)[:, None] * e.data - h @ e.data))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# batch normalization


class BNState:
    """Learnable scale/shift plus running statistics for 1-D batch norm."""

    def __init__(self, channels: int, eps: float = 1e-5, momentum: float = 0.1):
        self.gamma = Tensor(np.ones(channels), requires_grad=True)
        self.shift = Tensor(np.zeros(channels), requires_grad=True)
        self.running_mean = np.zeros(channels)
        self.running_var = np.ones(channels)
        self.eps = eps
        self.momentum = momentum


def batch_norm_1d(x: Tensor, state: BNState, training: bool) -> Tensor:
    """Normalize B x C over the batch axis.

    Training mode uses (biased) batch statistics and updates the running
    mean/var with ``momentum``; eval mode uses the running statistics.
    """
    _require_2d(x, "batch_norm_1d input")
    b = x.shape[0]
    gamma, shift = state.gamma, state.shift
    if training:
        if b < 2:
            raise ShapeError(f"batch_norm_1d training needs batch >= 2, got {b}")
        mu = x.data.mean(axis=0)
        var = x.data.var(axis=0)
        inv_std = 1.0 / np.sqrt(var + state.eps)
        xhat = (x.data - mu) * inv_std
        m = state.momentum
        state.running_mean = (1.0 - m) * state.running_mean + m * mu
        state.running_var = (1.0 - m) * state.running_var + m * var
    else:
        inv_std = 1.0 / np.sqrt(state.running_var + state.eps)
        xhat = (x.data - state.running_mean) * inv_std
    out = _result(xhat * gamma.data + shift.data[None, :], x, gamma, shift)

    def bwd():
        if out.grad is None:
            return
        gy = out.grad
        gamma.accumulate_grad((gy * xhat).sum(axis=0))
        shift.accumulate_grad(gy.sum(axis=0))
        dxhat = gy * gamma.data[None, :]
        if training:
            # full batch-norm backward: mean and variance depend on x
            term = b * dxhat - dxhat.sum(axis=0) - xhat * (dxhat * xhat).sum(axis=0)
            x.accumulate_grad(inv_std / b * term)
        else:
            x.accumulate_grad(dxhat * inv_std)

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# convolution (toy backbone)


def _conv_geometry(h, w, kh, kw, stride, pad):
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    return oh, ow


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    b, c, h, w = x.shape
    oh, ow = _conv_geometry(h, w, kh, kw, stride, pad)
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    cols = np.empty((b, c, kh, kw, oh, ow))
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride]
    # (B*OH*OW, C*kh*kw)
    return cols.transpose(0, 4, 5, 1, 2, 3).reshape(b * oh * ow, c * kh * kw), (oh, ow)


def _col2im(gcols: np.ndarray, x_shape, kh, kw, stride, pad, oh, ow):
    b, c, h, w = x_shape
    g6 = gcols.reshape(b, oh, ow, c, kh, kw).transpose(0, 3, 4, 5, 1, 2)
    gxp = np.zeros((b, c, h + 2 * pad, w + 2 * pad))
    for i in range(kh):
        for j in range(kw):
            gxp[:, :, i : i + stride * oh : stride, j : j + stride * ow : stride] += g6[:, :, i, j]
    return gxp[:, :, pad : pad + h, pad : pad + w] if pad else gxp


def conv2d(x: Tensor, w: Tensor, bias: Tensor, stride: int = 1, pad: int = 0) -> Tensor:
    """NCHW convolution via im2col + the matmul kernel."""
    if x.data.ndim != 4 or w.data.ndim != 4:
        raise ShapeError(f"conv2d wants 4-D input/weights, got {x.shape} and {w.shape}")
    b, cin, h, wid = x.shape
    cout, cin_w, kh, kw = w.shape
    if cin != cin_w:
        raise ShapeError(f"conv2d channel mismatch: input {cin}, weight {cin_w}")
    if bias.shape != (cout,):
        raise ShapeError(f"conv2d bias shape {bias.shape} != ({cout},)")
    cols, (oh, ow) = _im2col(x.data, kh, kw, stride, pad)
    wmat = np.ascontiguousarray(w.data.reshape(cout, cin * kh * kw))
    y = K.matmul_nt(np.ascontiguousarray(cols), wmat) + bias.data[None, :]
    out = _result(y.reshape(b, oh, ow, cout).transpose(0, 3, 1, 2), x, w, bias)

    def bwd():
        if out.grad is None:
            return
        gy = np.ascontiguousarray(out.grad.transpose(0, 2, 3, 1).reshape(b * oh * ow, cout))
        bias.accumulate_grad(gy.sum(axis=0))
        w.accumulate_grad(K.matmul_tn(gy, np.ascontiguousarray(cols)).reshape(w.shape))
        gcols = K.matmul(gy, wmat)
        x.accumulate_grad(_col2im(gcols, x.shape, kh, kw, stride, pad, oh, ow))

    _record(out, bwd)
    return out


# ---------------------------------------------------------------------------
# spatial <-> patch layout


def global_avg_pool_hw(x: Tensor) -> Tensor:
    """B x C x H x W -> B x C mean over the spatial extent."""
    if x.data.ndim != 4:
        raise ShapeError(f"global_avg_pool_hw wants 4-D input, got {x.shape}")
    hw = x.shape[2] * x.shape[3]
    out = _result(x.data.mean(axis=(2, 3)), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(np.broadcast_to(out.grad[:, :, None, None] / hw, x.shape).copy())

    _record(out, bwd)
    return out


def to_patches(x: Tensor) -> Tensor:
    """B x C x H x W -> B x N x C with patch index i = h * W + w."""
    if x.data.ndim != 4:
        raise ShapeError(f"to_patches wants 4-D input, got {x.shape}")
    b, c, h, w = x.shape
    out = _result(np.ascontiguousarray(x.data.transpose(0, 2, 3, 1).reshape(b, h * w, c)), x)

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(
            np.ascontiguousarray(out.grad.reshape(b, h, w, c).transpose(0, 3, 1, 2))
        )

    _record(out, bwd)
    return out


def from_patches(x: Tensor, grid_h: int, grid_w: int) -> Tensor:
    """Inverse of to_patches: B x N x C -> B x C x H x W."""
    if x.data.ndim != 3:
        raise ShapeError(f"from_patches wants 3-D input, got {x.shape}")
    b, n, c = x.shape
    if n != grid_h * grid_w:
        raise ShapeError(f"{n} patches do not fill a {grid_h} x {grid_w} grid")
    out = _result(
        np.ascontiguousarray(x.data.reshape(b, grid_h, grid_w, c).transpose(0, 3, 1, 2)), x
    )

    def bwd():
        if out.grad is None:
            return
        x.accumulate_grad(
            np.ascontiguousarray(out.grad.transpose(0, 2, 3, 1).reshape(b, n, c))
        )

    _record(out, bwd)
    return out
