"""Training loop, optimizers, PK batch sampling, evaluation, ablation.

Everything is deterministic under a fixed seed: the sampler owns its
own RNG (so every ablation arm consumes the identical batch sequence),
parameters update in registry order, and evaluation reduces per query
in index order.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field

import numpy as np

from .data import SyntheticDataset
from .losses import LossConfig, total_loss
from .metrics import evaluate_retrieval
from .model import (
    ModelConfig,
    ModelParams,
    init_model,
    model_forward,
    named_parameters,
    retrieval_embedding,
)
from .schedule import lr_at
from .serialize import save_archive
from .tensor import Tape, Tensor, backward

OPTIMIZERS = ("adam", "sgd_momentum")
SCHEDULES = ("cosine", "step")


class NumericError(RuntimeError):
    """Training produced a non-finite loss."""


@dataclass
class TrainConfig:
    optimizer: str = "adam"
    base_lr: float = 2e-3
    warmup_iters: int = 30
    warmup_factor: float = 0.01
    schedule: str = "cosine"
    step_milestones: tuple[int, ...] = (30, 70, 90)
    step_gamma: float = 0.1
    lr_min: float = 0.0
    momentum: float = 0.9
    epochs: int = 60
    p: int = 4
    k: int = 4
    seed: int = 0
    eval_every: int = 0  # epochs; 0 = never during training
    margin: float = 0.3
    mining: str = "batch_hard"
    weight_backbone: float = 1.0
    weight_triplet: float = 1.0
    weight_id: float = 1.0

    def __post_init__(self):
        if self.optimizer not in OPTIMIZERS:
            raise ValueError(f"optimizer must be one of {OPTIMIZERS}, got {self.optimizer!r}")
        if self.schedule not in SCHEDULES:
            raise ValueError(f"schedule must be one of {SCHEDULES}, got {self.schedule!r}")
        if self.base_lr <= 0:
            raise ValueError(f"base_lr must be positive, got {self.base_lr}")
        if self.warmup_iters < 0:
            raise ValueError(f"warmup_iters must be >= 0, got {self.warmup_iters}")
        if self.epochs < 1 or self.p < 1 or self.k < 1:
            raise ValueError("epochs, p and k must be positive")

    def loss_config(self) -> LossConfig:
        return LossConfig(
            weight_backbone=self.weight_backbone,
            weight_triplet=self.weight_triplet,
            weight_id=self.weight_id,
            margin=self.margin,
            mining=self.mining,
        )


# ---------------------------------------------------------------------------
# optimizers


class SGDMomentum:
    def __init__(self, params: list[tuple[str, Tensor]], momentum: float = 0.9):
        self.params = params
        self.momentum = momentum
        self.velocity = [np.zeros_like(t.data) for _, t in params]

    def step(self, lr: float) -> None:
        for (name, t), v in zip(self.params, self.velocity):
            g = t.grad if t.grad is not None else 0.0
            v *= self.momentum
            v += g
            t.data -= lr * v


class Adam:
    def __init__(
        self,
        params: list[tuple[str, Tensor]],
        beta1: float = 0.9,
        beta2: float = 0.999,
        eps: float = 1e-8,
    ):
        self.params = params
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = [np.zeros_like(t.data) for _, t in params]
        self.v = [np.zeros_like(t.data) for _, t in params]
        self.t = 0

    def step(self, lr: float) -> None:
        self.t += 1
        c1 = 1.0 - self.beta1**self.t
        c2 = 1.0 - self.beta2**self.t
        for (name, t), m, v in zip(self.params, self.m, self.v):
            g = t.grad if t.grad is not None else np.zeros_like(t.data)
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            t.data -= lr * (m / c1) / (np.sqrt(v / c2) + self.eps)


def make_optimizer(cfg: TrainConfig, params: list[tuple[str, Tensor]]):
    if cfg.optimizer == "adam":
        return Adam(params)
    return SGDMomentum(params, momentum=cfg.momentum)


def zero_grads(params: list[tuple[str, Tensor]]) -> None:
    for _, t in params:
        t.zero_grad()


# ---------------------------------------------------------------------------
# batch sampling


def pk_batches(labels: np.ndarray, p: int, k: int, rng: np.random.Generator) -> list[np.ndarray]:
    """One epoch of P-identity x K-instance batches.

    Identities are shuffled and chunked into groups of P (remainder
    dropped); each contributes K of its samples, drawn without
    replacement when it has at least K, with replacement otherwise.
    """
    ids = np.unique(labels)
    order = rng.permutation(ids)
    batches = []
    for lo in range(0, len(order) - p + 1, p):
        group = order[lo : lo + p]
        chosen = []
        for identity in group:
            pool = np.flatnonzero(labels == identity)
            if len(pool) >= k:
                chosen.append(rng.permutation(pool)[:k])
            else:
                chosen.append(rng.choice(pool, size=k, replace=True))
        batches.append(np.concatenate(chosen))
    return batches


# ---------------------------------------------------------------------------
# evaluation


def embed_indices(
    params: ModelParams,
    config: ModelConfig,
    dataset: SyntheticDataset,
    indices: np.ndarray,
    batch_size: int = 32,
) -> np.ndarray:
    """Eval-mode retrieval embeddings for the given sample indices."""
    chunks = []
    for lo in range(0, len(indices), batch_size):
        batch = indices[lo : lo + batch_size]
        x = Tensor(dataset.features[batch])
        outputs = model_forward(x, params, config, training=False)
        chunks.append(retrieval_embedding(outputs, config).data)
    return np.concatenate(chunks, axis=0)


def evaluate_model(
    params: ModelParams, config: ModelConfig, dataset: SyntheticDataset
) -> dict:
    q_idx, g_idx = dataset.query_indices, dataset.gallery_indices
    q_emb = embed_indices(params, config, dataset, q_idx)
    g_emb = embed_indices(params, config, dataset, g_idx)
    return evaluate_retrieval(
        q_emb, dataset.labels[q_idx], g_emb, dataset.labels[g_idx], k_values=(1, 5)
    )


# ---------------------------------------------------------------------------
# training


@dataclass
class TrainResult:
    params: ModelParams
    config: ModelConfig
    log_lines: list[str] = field(default_factory=list)
    final_metrics: dict | None = None


def _format_g(v: float) -> str:
    return f"{v:.10g}"


def train_model(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: SyntheticDataset,
    dump_path=None,
    evaluate_at_end: bool = True,
) -> TrainResult:
    """Run the full loop; raises NumericError on a non-finite loss.

    ``dump_path``, when set, receives an archive of the offending batch
    before the raise.
    """
    params = init_model(model_cfg)
    plist = named_parameters(params)
    optimizer = make_optimizer(train_cfg, plist)
    loss_cfg = train_cfg.loss_config()
    sampler_rng = np.random.default_rng(train_cfg.seed)

    n_ids = len(np.unique(dataset.labels))
    iters_per_epoch = max(n_ids // train_cfg.p, 1)
    total_iters = train_cfg.epochs * iters_per_epoch

    result = TrainResult(params=params, config=model_cfg)
    step = 0
    for epoch in range(train_cfg.epochs):
        for batch in pk_batches(dataset.labels, train_cfg.p, train_cfg.k, sampler_rng):
            lr = lr_at(
                step,
                base_lr=train_cfg.base_lr,
                warmup_iters=train_cfg.warmup_iters,
                schedule=train_cfg.schedule,
                total_iters=total_iters,
                iters_per_epoch=iters_per_epoch,
                lr_min=train_cfg.lr_min,
                warmup_factor=train_cfg.warmup_factor,
                step_milestones=train_cfg.step_milestones,
                step_gamma=train_cfg.step_gamma,
            )
            x = Tensor(dataset.features[batch])
            labels = dataset.labels[batch]
            with Tape() as tape:
                outputs = model_forward(x, params, model_cfg, training=True)
                loss, parts = total_loss(outputs, labels, loss_cfg)
            if not math.isfinite(parts["total"]):
                if dump_path is not None:
                    save_archive(
                        dump_path,
                        f"step = {step}\nepoch = {epoch}\n",
                        [("features", dataset.features[batch]),
                         ("labels", labels.astype(np.float64))],
                    )
                raise NumericError(
                    f"non-finite loss {parts['total']} at step {step} (epoch {epoch})"
                    + (f"; offending batch dumped to {dump_path}" if dump_path else "")
                )
            zero_grads(plist)
            backward(loss, tape)
            optimizer.step(lr)
            result.log_lines.append(
                f"step={step} epoch={epoch} lr={_format_g(lr)} "
                f"total={_format_g(parts['total'])} "
                f"backbone_triplet={_format_g(parts['backbone_triplet'])} "
                f"triplet={_format_g(parts['triplet'])} id={_format_g(parts['id'])}"
            )
            step += 1
        if train_cfg.eval_every and (epoch + 1) % train_cfg.eval_every == 0:
            report = evaluate_model(params, model_cfg, dataset)
            result.log_lines.append(
                f"eval epoch={epoch} mAP={_format_g(report['mAP'])} "
                f"rank1={_format_g(report['rank1'])} rank5={_format_g(report['rank5'])}"
            )

    if evaluate_at_end:
        result.final_metrics = evaluate_model(params, model_cfg, dataset)
    return result


# ---------------------------------------------------------------------------
# ablation over the erasure percentile


def ablate_percentiles(
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
    dataset: SyntheticDataset,
    percentiles=(0.0, 75.0, 85.0, 95.0, 98.0),
) -> list[dict]:
    """One training run per percentile, identical seeds and batches."""
    rows = []
    for pct in percentiles:
        arm_cfg = dataclasses.replace(model_cfg, percentile=float(pct))
        result = train_model(arm_cfg, train_cfg, dataset)
        rows.append(
            {
                "percentile": float(pct),
                "mAP": result.final_metrics["mAP"],
                "rank1": result.final_metrics["rank1"],
                "rank5": result.final_metrics["rank5"],
            }
        )
    return rows


def format_ablation_table(rows: list[dict]) -> str:
    header = f"{'percentile':>10}  {'mAP':>8}  {'rank1':>8}  {'rank5':>8}"
    lines = [header, "-" * len(header)]
    for row in rows:
        lines.append(
            f"{row['percentile']:>10.1f}  {row['mAP']:>8.4f}  "
            f"{row['rank1']:>8.4f}  {row['rank5']:>8.4f}"
        )
    return "\n".join(lines) + "\n"
