"""Triplet losses (main + auxiliary backbone), identity cross-entropy,
and their weighted total.

The triplet uses non-squared Euclidean distance with 1e-12 added inside
the square root so the gradient stays finite at zero distance. Batch
hard mining follows the usual re-ID recipe: per anchor, hardest
positive is the farthest same-identity sample, hardest negative the
closest other-identity sample; anchors without both are skipped.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import ops
from .model import ForwardOutputs
from .tensor import Tensor

DIST_EPS = 1e-12
MINING_MODES = ("batch_hard", "all_pairs")


@dataclass
class LossConfig:
    weight_backbone: float = 1.0
    weight_triplet: float = 1.0
    weight_id: float = 1.0
    margin: float = 0.3
    mining: str = "batch_hard"

    def __post_init__(self):
        if min(self.weight_backbone, self.weight_triplet, self.weight_id) < 0:
            raise ValueError("loss weights must be non-negative")
        if self.margin < 0:
            raise ValueError(f"margin must be non-negative, got {self.margin}")
        if self.mining not in MINING_MODES:
            raise ValueError(f"mining must be one of {MINING_MODES}, got {self.mining!r}")


def pairwise_distances(emb: Tensor) -> Tensor:
    """B x B Euclidean distances between embedding rows."""
    return ops.sqrt(ops.add_scalar(ops.pairwise_sqdist(emb), DIST_EPS))


def _describe_batch(labels: np.ndarray) -> str:
    ids, counts = np.unique(labels, return_counts=True)
    return ", ".join(f"id {i}: {c}" for i, c in zip(ids, counts))


def triplet_loss(
    emb: Tensor, labels, margin: float = 0.3, mining: str = "batch_hard"
) -> Tensor:
    labels = np.asarray(labels, dtype=np.int64)
    b = emb.shape[0]
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    same = labels[:, None] == labels[None, :]
    pos_mask = same & ~np.eye(b, dtype=bool)
    neg_mask = ~same
    valid = pos_mask.any(axis=1) & neg_mask.any(axis=1)
    if not valid.any():
        raise ValueError(
            f"no anchor with both a positive and a negative in batch ({_describe_batch(labels)})"
        )

    d = pairwise_distances(emb)
    if mining == "batch_hard":
        anchors = np.flatnonzero(valid)
        dist = d.data
        hardest_pos = np.where(pos_mask[anchors], dist[anchors], -np.inf).argmax(axis=1)
        hardest_neg = np.where(neg_mask[anchors], dist[anchors], np.inf).argmin(axis=1)
        d_pos = ops.gather_pairs(d, anchors, hardest_pos)
        d_neg = ops.gather_pairs(d, anchors, hardest_neg)
        hinges = ops.relu(ops.add_scalar(ops.sub(d_pos, d_neg), margin))
        return ops.mean_all(hinges)
    if mining == "all_pairs":
        a_idx, p_idx, n_idx = [], [], []
        for a in np.flatnonzero(valid):
            for p in np.flatnonzero(pos_mask[a]):
                for n in np.flatnonzero(neg_mask[a]):
                    a_idx.append(a)
                    p_idx.append(p)
                    n_idx.append(n)
        d_pos = ops.gather_pairs(d, a_idx, p_idx)
        d_neg = ops.gather_pairs(d, a_idx, n_idx)
        hinges = ops.relu(ops.add_scalar(ops.sub(d_pos, d_neg), margin))
        return ops.mean_all(hinges)
    raise ValueError(f"mining must be one of {MINING_MODES}, got {mining!r}")


def id_loss(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy of row-softmax logits against integer labels."""
    labels = np.asarray(labels, dtype=np.int64)
    b, k = logits.shape
    if labels.shape != (b,):
        raise ValueError(f"labels shape {labels.shape} does not match batch {b}")
    if labels.min() < 0 or labels.max() >= k:
        raise ValueError(f"labels must lie in [0, {k}), got range "
                         f"[{labels.min()}, {labels.max()}]")
    log_probs = ops.log_softmax_rows(logits)
    picked = ops.gather_pairs(log_probs, np.arange(b), labels)
    return ops.scale(ops.mean_all(picked), -1.0)


def total_loss(
    outputs: ForwardOutputs, labels, cfg: LossConfig
) -> tuple[Tensor, dict]:
    """Weighted sum of the three supervision terms plus their values."""
    l_backbone = triplet_loss(outputs.backbone_vec, labels, cfg.margin, cfg.mining)
    l_triplet = triplet_loss(outputs.gap_vec, labels, cfg.margin, cfg.mining)
    l_id = id_loss(outputs.logits, labels)
    total = ops.add(
        ops.add(
            ops.scale(l_backbone, cfg.weight_backbone),
            ops.scale(l_triplet, cfg.weight_triplet),
        ),
        ops.scale(l_id, cfg.weight_id),
    )
    breakdown = {
        "total": total.item(),
        "backbone_triplet": l_backbone.item(),
        "triplet": l_triplet.item(),
        "id": l_id.item(),
    }
    return total, breakdown
