"""Central finite-difference gradient checking shared by the tests.

The independent oracle: perturb one coordinate at a time by +/-h and
difference the recomputed loss. Relative error uses a 1e-3 floor in the
denominator so FD roundoff (~1e-10 absolute at h=1e-6 in float64) never
dominates near-zero gradients; genuine backward-rule bugs produce
errors on the scale of the gradients themselves and are still caught.
"""

import numpy as np

from patchgraph.tensor import Tape, Tensor, backward

H = 1e-6
DENOM_FLOOR = 1e-3


def analytic_grads(build_loss, tensors):
    for t in tensors:
        t.zero_grad()
    with Tape() as tape:
        loss = build_loss()
    backward(loss, tape)
    return [np.zeros_like(t.data) if t.grad is None else t.grad.copy() for t in tensors]


def numeric_grad(build_loss, tensor, coords, h=H):
    grad = {}
    flat = tensor.data.reshape(-1)
    for idx in coords:
        orig = flat[idx]
        flat[idx] = orig + h
        up = build_loss().item()
        flat[idx] = orig - h
        down = build_loss().item()
        flat[idx] = orig
        grad[idx] = (up - down) / (2.0 * h)
    return grad


def rel_err(a, b):
    return abs(a - b) / max(abs(a), abs(b), DENOM_FLOOR)


def max_rel_err(build_loss, tensors, h=H, max_coords=None, seed=0):
    """Worst relative error between analytic and FD gradients.

    ``build_loss`` must rebuild the forward pass from the tensors'
    current data every call. ``max_coords`` caps the coordinates checked
    per tensor (sampled deterministically) for large parameters.
    """
    rng = np.random.default_rng(seed)
    grads = analytic_grads(build_loss, tensors)
    worst = 0.0
    for t, g in zip(tensors, grads):
        n = t.data.size
        if max_coords is not None and n > max_coords:
            coords = rng.choice(n, size=max_coords, replace=False)
        else:
            coords = range(n)
        fd = numeric_grad(build_loss, t, coords, h=h)
        gflat = g.reshape(-1)
        for idx, fd_val in fd.items():
            worst = max(worst, rel_err(gflat[idx], fd_val))
    return worst
