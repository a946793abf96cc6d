"""Full network: feature source, patch reshape, block stack, pooled
heads.

The forward pass produces three supervision points: the pooled backbone
feature (auxiliary triplet), the pooled block-stack output (main
triplet, and the default retrieval embedding), and the batch-normalized
vector feeding the bias-free identity classifier.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import ops
from .blocks import BlockParams, init_block_params, stack_forward
from .ops import BNState
from .tensor import ShapeError, Tensor

BACKBONES = ("passthrough", "toy_conv")
RETRIEVAL_POINTS = ("gap", "bn")

# toy_conv: three stride-2 3x3 convs, so images are 8x the feature grid
TOY_CONV_MID = 8
TOY_CONV_FACTOR = 8


@dataclass
class ModelConfig:
    grid_h: int
    grid_w: int
    channels: int
    n_identities: int
    n_blocks: int = 2
    percentile: float = 95.0
    ffd_hidden: int = 0  # 0 means 2 * channels
    backbone: str = "passthrough"
    residual: bool = False
    retrieval: str = "gap"
    seed: int = 0

    def __post_init__(self):
        if self.channels % 2 != 0:
            raise ValueError(f"channels must be even, got {self.channels}")
        if self.grid_h < 1 or self.grid_w < 1:
            raise ValueError(f"grid must be at least 1x1, got {self.grid_h}x{self.grid_w}")
        if self.n_identities < 2:
            raise ValueError(f"need at least 2 identities, got {self.n_identities}")
        if not 0.0 <= self.percentile <= 100.0:
            raise ValueError(f"percentile must be in [0, 100], got {self.percentile}")
        if self.n_blocks < 1:
            raise ValueError(f"need at least one block, got {self.n_blocks}")
        if self.backbone not in BACKBONES:
            raise ValueError(f"backbone must be one of {BACKBONES}, got {self.backbone!r}")
        if self.retrieval not in RETRIEVAL_POINTS:
            raise ValueError(
                f"retrieval must be one of {RETRIEVAL_POINTS}, got {self.retrieval!r}"
            )

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def ffd_width(self) -> int:
        return self.ffd_hidden if self.ffd_hidden > 0 else 2 * self.channels


@dataclass
class ConvLayer:
    w: Tensor
    b: Tensor


@dataclass
class ModelParams:
    conv_layers: list[ConvLayer] = field(default_factory=list)
    blocks: list[BlockParams] = field(default_factory=list)
    bn: BNState = None
    classifier: Tensor = None


@dataclass
class ForwardOutputs:
    backbone_vec: Tensor  # pooled backbone map, auxiliary triplet point
    gap_vec: Tensor  # pooled block output, main triplet + retrieval point
    bn_vec: Tensor  # normalized vector feeding the classifier
    logits: Tensor


def _xavier(rng, fan_in, fan_out, shape) -> Tensor:
    bound = np.sqrt(6.0 / (fan_in + fan_out))
    return Tensor(rng.uniform(-bound, bound, size=shape), requires_grad=True)


def init_model(config: ModelConfig) -> ModelParams:
    rng = np.random.default_rng(config.seed)
    params = ModelParams()
    if config.backbone == "toy_conv":
        widths = [3, TOY_CONV_MID, config.channels, config.channels]
        for cin, cout in zip(widths[:-1], widths[1:]):
            fan_in, fan_out = cin * 9, cout * 9
            params.conv_layers.append(
                ConvLayer(
                    w=_xavier(rng, fan_in, fan_out, (cout, cin, 3, 3)),
                    b=Tensor(np.zeros(cout), requires_grad=True),
                )
            )
    for _ in range(config.n_blocks):
        params.blocks.append(
            init_block_params(config.n_patches, config.channels, config.ffd_width, rng)
        )
    params.bn = BNState(config.channels)
    params.classifier = _xavier(
        rng, config.channels, config.n_identities, (config.channels, config.n_identities)
    )
    return params


def named_parameters(params: ModelParams) -> list[tuple[str, Tensor]]:
    """Trainable tensors in a fixed, checkpoint-stable order."""
    out = []
    for i, layer in enumerate(params.conv_layers):
        out.append((f"conv{i}.w", layer.w))
        out.append((f"conv{i}.b", layer.b))
    for i, blk in enumerate(params.blocks):
        out.append((f"block{i}.p_pos", blk.p_pos))
        out.append((f"block{i}.branch_a.w_q", blk.branch_a.w_q))
        out.append((f"block{i}.branch_a.w_k", blk.branch_a.w_k))
        out.append((f"block{i}.branch_b.w_q", blk.branch_b.w_q))
        out.append((f"block{i}.branch_b.w_k", blk.branch_b.w_k))
        out.append((f"block{i}.w_gn_a", blk.w_gn_a))
        out.append((f"block{i}.w_gn_b", blk.w_gn_b))
        out.append((f"block{i}.ffd_w1", blk.ffd_w1))
        out.append((f"block{i}.ffd_b1", blk.ffd_b1))
        out.append((f"block{i}.ffd_w2", blk.ffd_w2))
        out.append((f"block{i}.ffd_b2", blk.ffd_b2))
    out.append(("bn.gamma", params.bn.gamma))
    out.append(("bn.shift", params.bn.shift))
    out.append(("classifier.w", params.classifier))
    return out


def named_buffers(params: ModelParams) -> list[tuple[str, np.ndarray]]:
    """Non-trainable state carried by checkpoints (BN running stats)."""
    return [
        ("bn.running_mean", params.bn.running_mean),
        ("bn.running_var", params.bn.running_var),
    ]


def backbone_forward(x: Tensor, params: ModelParams, config: ModelConfig) -> Tensor:
    """Feature source: raw images through the conv stub, or maps as-is."""
    if config.backbone == "passthrough":
        expect = (config.channels, config.grid_h, config.grid_w)
        if x.data.ndim != 4 or x.shape[1:] != expect:
            raise ShapeError(f"passthrough input must be B x {expect}, got {x.shape}")
        return x
    img_h = config.grid_h * TOY_CONV_FACTOR
    img_w = config.grid_w * TOY_CONV_FACTOR
    if x.data.ndim != 4 or x.shape[1:] != (3, img_h, img_w):
        raise ShapeError(f"toy_conv input must be B x (3, {img_h}, {img_w}), got {x.shape}")
    h = x
    for layer in params.conv_layers:
        h = ops.relu(ops.conv2d(h, layer.w, layer.b, stride=2, pad=1))
    return h


def model_forward(
    x: Tensor,
    params: ModelParams,
    config: ModelConfig,
    training: bool,
    trace: list | None = None,
) -> ForwardOutputs:
    fmap = backbone_forward(x, params, config)
    backbone_vec = ops.global_avg_pool_hw(fmap)

    patches = ops.to_patches(fmap)
    pooled = []
    for i in range(patches.shape[0]):
        sample = ops.slice_axis0(patches, i)
        y = stack_forward(
            sample,
            params.blocks,
            config.percentile,
            residual=config.residual,
            trace=trace if (trace is not None and i == 0) else None,
        )
        pooled.append(ops.mean_over_axis(y, axis=0))
    gap_vec = ops.stack_rows(pooled)

    bn_vec = ops.batch_norm_1d(gap_vec, params.bn, training)
    logits = ops.matmul(bn_vec, params.classifier)
    return ForwardOutputs(
        backbone_vec=backbone_vec, gap_vec=gap_vec, bn_vec=bn_vec, logits=logits
    )


def retrieval_embedding(outputs: ForwardOutputs, config: ModelConfig) -> Tensor:
    return outputs.gap_vec if config.retrieval == "gap" else outputs.bn_vec
