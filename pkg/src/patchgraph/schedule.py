"""Learning-rate schedules: linear warm-up into cosine annealing or
stepped decay.

The warm-up ramps linearly from ``base_lr * warmup_factor`` at
iteration 0 to ``base_lr`` at ``warmup_iters``. Cosine then decays to
``lr_min`` at the final scheduled iteration; the step schedule
multiplies by ``step_gamma`` at each milestone epoch (0-based epoch
counter, so milestone 30 takes effect on the 31st epoch).
"""

from __future__ import annotations

import math


def warmup_lr(iteration: int, base_lr: float, warmup_iters: int, warmup_factor: float) -> float:
    start = base_lr * warmup_factor
    if warmup_iters <= 0:
        return base_lr
    frac = min(iteration, warmup_iters) / warmup_iters
    return start + (base_lr - start) * frac


def cosine_lr(
    iteration: int, base_lr: float, warmup_iters: int, total_iters: int, lr_min: float
) -> float:
    span = total_iters - warmup_iters
    if span <= 0:
        return base_lr
    t = min(max(iteration - warmup_iters, 0), span)
    return lr_min + (base_lr - lr_min) * 0.5 * (1.0 + math.cos(math.pi * t / span))


def step_lr(epoch: int, base_lr: float, milestones, gamma: float) -> float:
    drops = sum(1 for m in milestones if epoch >= m)
    return base_lr * gamma**drops


def lr_at(
    iteration: int,
    *,
    base_lr: float,
    warmup_iters: int,
    schedule: str,
    total_iters: int,
    iters_per_epoch: int,
    lr_min: float = 0.0,
    warmup_factor: float = 0.01,
    step_milestones=(30, 70, 90),
    step_gamma: float = 0.1,
) -> float:
    """Scheduled learning rate for a global iteration counter."""
    if iteration < warmup_iters:
        return warmup_lr(iteration, base_lr, warmup_iters, warmup_factor)
    if schedule == "cosine":
        return cosine_lr(iteration, base_lr, warmup_iters, total_iters, lr_min)
    if schedule == "step":
        epoch = iteration // max(iters_per_epoch, 1)
        return step_lr(epoch, base_lr, step_milestones, step_gamma)
    raise ValueError(f"schedule must be 'cosine' or 'step', got {schedule!r}")
