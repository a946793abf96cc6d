"""Synthetic dataset generation and LR schedules."""

import numpy as np
import pytest

from patchgraph.data import SyntheticDataset, SyntheticSpec, generate_dataset
from patchgraph.schedule import lr_at


class TestSyntheticSpec:
    def test_patch_budget_enforced(self):
        with pytest.raises(ValueError):
            SyntheticSpec(grid_h=2, grid_w=2, signal_patches=3, noise_patches=2)

    def test_minimum_sizes(self):
        with pytest.raises(ValueError):
            SyntheticSpec(n_identities=1)
        with pytest.raises(ValueError):
            SyntheticSpec(samples_per_identity=1)


class TestGeneration:
    def _spec(self, **kw):
        base = dict(
            n_identities=4,
            samples_per_identity=3,
            grid_h=2,
            grid_w=2,
            channels=4,
            signal_patches=2,
            noise_patches=2,
            noise_scale=2.0,
            jitter=0.1,
            seed=7,
        )
        base.update(kw)
        return SyntheticSpec(**base)

    def test_shapes_and_split(self):
        ds = generate_dataset(self._spec())
        assert ds.features.shape == (12, 4, 2, 2)
        assert ds.labels.tolist() == [0, 0, 0, 1, 1, 1, 2, 2, 2, 3, 3, 3]
        # first sample of each identity is the query
        assert ds.query_indices.tolist() == [0, 3, 6, 9]
        assert ds.gallery_indices.size == 8

    def test_same_seed_bitwise_identical(self):
        a = generate_dataset(self._spec())
        b = generate_dataset(self._spec())
        assert np.array_equal(a.features, b.features)
        assert np.array_equal(a.noise_mask, b.noise_mask)
        assert np.array_equal(a.signal_mask, b.signal_mask)

    def test_different_seed_differs(self):
        a = generate_dataset(self._spec())
        b = generate_dataset(self._spec(seed=8))
        assert not np.array_equal(a.features, b.features)

    def test_noise_disjoint_from_signal(self):
        ds = generate_dataset(self._spec())
        assert not (ds.noise_mask & ds.signal_mask[None, :]).any()
        assert (ds.noise_mask.sum(axis=1) == 2).all()

    def test_clean_separable_samples_identical_per_identity(self):
        ds = generate_dataset(self._spec(noise_patches=0, jitter=0.0))
        for identity in range(4):
            idx = np.flatnonzero(ds.labels == identity)
            for i in idx[1:]:
                assert np.array_equal(ds.features[i], ds.features[idx[0]])

    def test_signal_free_data_carries_no_identity(self):
        ds = generate_dataset(self._spec(signal_patches=0, noise_patches=4))
        # all content is per-sample fresh noise: no two samples match
        flat = ds.features.reshape(len(ds.labels), -1)
        assert np.unique(flat, axis=0).shape[0] == len(ds.labels)
        assert not ds.signal_mask.any()

    def test_patch_layout_matches_noise_mask(self):
        ds = generate_dataset(self._spec())
        s = 1
        patches = ds.features[s].transpose(1, 2, 0).reshape(4, 4)
        zero_rows = np.flatnonzero((patches == 0).all(axis=1))
        covered = ds.noise_mask[s] | ds.signal_mask
        assert set(zero_rows) == set(np.flatnonzero(~covered))


class TestSchedules:
    def _lr(self, it, **kw):
        base = dict(
            base_lr=0.01,
            warmup_iters=100,
            schedule="cosine",
            total_iters=600,
            iters_per_epoch=10,
            lr_min=0.0,
            warmup_factor=0.01,
        )
        base.update(kw)
        return lr_at(it, **base)

    def test_warmup_endpoints(self):
        assert self._lr(0) == pytest.approx(0.01 * 0.01)
        assert self._lr(100) == pytest.approx(0.01)

    def test_warmup_is_linear(self):
        quarter = self._lr(25)
        expect = 0.0001 + (0.01 - 0.0001) * 0.25
        assert quarter == pytest.approx(expect)

    def test_cosine_halfway_value(self):
        # halfway between warmup end (100) and final iter (600) -> 350
        assert self._lr(350) == pytest.approx((0.01 + 0.0) / 2.0)

    def test_cosine_reaches_min_at_end(self):
        assert self._lr(600, lr_min=0.002) == pytest.approx(0.002)

    def test_step_drops_at_milestones(self):
        kw = dict(
            schedule="step",
            warmup_iters=0,
            step_milestones=(30, 70, 90),
            step_gamma=0.1,
            iters_per_epoch=10,
            total_iters=1000,
        )
        # drops by 0.1 entering epochs 30, 70 and 90
        assert self._lr(299, **kw) == pytest.approx(0.01)
        assert self._lr(300, **kw) == pytest.approx(0.001)
        assert self._lr(699, **kw) == pytest.approx(0.001)
        assert self._lr(700, **kw) == pytest.approx(0.0001)
        assert self._lr(900, **kw) == pytest.approx(0.00001)

    def test_unknown_schedule_rejected(self):
        with pytest.raises(ValueError):
            self._lr(0, schedule="poly", warmup_iters=0)
