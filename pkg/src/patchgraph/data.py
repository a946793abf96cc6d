"""Synthetic re-identification data.

Each identity owns a prototype over a fixed set of signal patch
positions. A sample copies the prototype with Gaussian jitter, then
overwrites a per-sample random choice of non-signal positions with
identity-independent noise (the stand-in for background clutter and
occlusion). The first sample of every identity becomes the query; the
rest form the gallery.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass
class SyntheticSpec:
    n_identities: int = 20
    samples_per_identity: int = 8
    grid_h: int = 4
    grid_w: int = 4
    channels: int = 16
    signal_patches: int = 8
    noise_patches: int = 8
    noise_scale: float = 2.0
    jitter: float = 0.3
    seed: int = 0

    def __post_init__(self):
        n = self.grid_h * self.grid_w
        if self.signal_patches + self.noise_patches > n:
            raise ValueError(
                f"signal ({self.signal_patches}) + noise ({self.noise_patches}) "
                f"patches exceed the {n} available"
            )
        if self.signal_patches < 0 or self.noise_patches < 0:
            raise ValueError("patch counts must be non-negative")
        if self.n_identities < 2:
            raise ValueError(f"need at least 2 identities, got {self.n_identities}")
        if self.samples_per_identity < 2:
            raise ValueError(
                f"need at least 2 samples per identity (query + gallery), "
                f"got {self.samples_per_identity}"
            )

    @property
    def n_patches(self) -> int:
        return self.grid_h * self.grid_w

    @property
    def n_samples(self) -> int:
        return self.n_identities * self.samples_per_identity


@dataclass
class SyntheticDataset:
    features: np.ndarray  # (S, C, H, W)
    labels: np.ndarray  # (S,) int64
    is_query: np.ndarray  # (S,) bool
    noise_mask: np.ndarray  # (S, N) bool, per-sample noise positions
    signal_mask: np.ndarray  # (N,) bool, dataset-wide signal positions
    spec: SyntheticSpec

    @property
    def query_indices(self) -> np.ndarray:
        return np.flatnonzero(self.is_query)

    @property
    def gallery_indices(self) -> np.ndarray:
        return np.flatnonzero(~self.is_query)


def generate_dataset(spec: SyntheticSpec) -> SyntheticDataset:
    rng = np.random.default_rng(spec.seed)
    n, c = spec.n_patches, spec.channels
    s_total = spec.n_samples

    signal_pos = np.sort(rng.choice(n, size=spec.signal_patches, replace=False))
    other_pos = np.setdiff1d(np.arange(n), signal_pos)
    signal_mask = np.zeros(n, dtype=bool)
    signal_mask[signal_pos] = True

    features = np.zeros((s_total, c, spec.grid_h, spec.grid_w))
    labels = np.empty(s_total, dtype=np.int64)
    is_query = np.zeros(s_total, dtype=bool)
    noise_mask = np.zeros((s_total, n), dtype=bool)

    idx = 0
    for identity in range(spec.n_identities):
        proto = rng.normal(0.0, 1.0, size=(spec.signal_patches, c))
        for sample in range(spec.samples_per_identity):
            patches = np.zeros((n, c))
            if spec.signal_patches:
                patches[signal_pos] = proto + rng.normal(
                    0.0, spec.jitter, size=(spec.signal_patches, c)
                )
            if spec.noise_patches:
                noise_pos = rng.choice(other_pos, size=spec.noise_patches, replace=False)
                patches[noise_pos] = rng.normal(
                    0.0, spec.noise_scale, size=(spec.noise_patches, c)
                )
                noise_mask[idx, noise_pos] = True
            # patch index i = h * W + w, channel-last per patch
            features[idx] = patches.reshape(spec.grid_h, spec.grid_w, c).transpose(2, 0, 1)
            labels[idx] = identity
            is_query[idx] = sample == 0
            idx += 1

    return SyntheticDataset(
        features=features,
        labels=labels,
        is_query=is_query,
        noise_mask=noise_mask,
        signal_mask=signal_mask,
        spec=spec,
    )
