"""Tensor engine: forward semantics, backward rules vs finite
differences, tape behavior."""

import math

import numpy as np
import pytest

from fdcheck import max_rel_err
from patchgraph import ops
from patchgraph.tensor import GradientError, ShapeError, Tape, Tensor, backward

ATOL = 1e-12
FD_TOL = 1e-5


def t(data, grad=True):
    return Tensor(np.asarray(data, dtype=np.float64), requires_grad=grad)


class TestForwardSemantics:
    def test_matmul_identity(self):
        a = t(np.eye(2))
        b = t([[1.0, 2.0], [3.0, 4.0]])
        assert np.array_equal(ops.matmul(a, b).data, b.data)

    def test_matmul_projector_selects_row(self):
        proj = t([[1.0, 0.0], [0.0, 0.0]])
        m = t([[5.0, 6.0], [7.0, 8.0]])
        assert np.array_equal(ops.matmul(proj, m).data, [[5.0, 6.0], [0.0, 0.0]])

    def test_matmul_shape_error_names_both_shapes(self):
        with pytest.raises(ShapeError, match=r"\(2, 3\).*\(2, 2\)"):
            ops.matmul(t(np.ones((2, 3))), t(np.ones((2, 2))))

    def test_softmax_uniform_logits(self):
        y = ops.softmax_rows(t([[0.0, 0.0]]))
        assert np.allclose(y.data, [[0.5, 0.5]], atol=ATOL)

    def test_softmax_no_overflow_on_large_logits(self):
        y = ops.softmax_rows(t([[1000.0, 1000.0]]))
        assert np.allclose(y.data, [[0.5, 0.5]], atol=ATOL)
        assert np.isfinite(y.data).all()

    def test_softmax_closed_form(self):
        y = ops.softmax_rows(t([[0.0, math.log(3.0)]]))
        assert np.allclose(y.data, [[0.25, 0.75]], atol=ATOL)

    def test_softmax_rows_sum_to_one(self):
        rng = np.random.default_rng(3)
        y = ops.softmax_rows(t(rng.normal(size=(7, 5)) * 10))
        assert np.abs(y.data.sum(axis=1) - 1.0).max() < 1e-9
        assert ((y.data >= 0) & (y.data <= 1)).all()

    def test_relu_values(self):
        assert np.array_equal(ops.relu(t([[1.0, -2.0, 0.0]])).data, [[1.0, 0.0, 0.0]])

    def test_relu_gradient_sign_gate(self):
        x = t([[1.0, -2.0]])
        with Tape() as tape:
            y = ops.sum_all(ops.relu(x))
        backward(y, tape)
        assert np.array_equal(x.grad, [[1.0, 0.0]])

    def test_split_concat_round_trip(self):
        rng = np.random.default_rng(0)
        x = t(rng.normal(size=(3, 4)))
        halves = ops.split_channels(x, 2)
        assert halves[0].shape == (3, 2) and halves[1].shape == (3, 2)
        back = ops.concat_channels(halves)
        assert np.array_equal(back.data, x.data)

    def test_split_odd_channels_rejected(self):
        with pytest.raises(ShapeError):
            ops.split_channels(t(np.ones((3, 5))), 2)

    def test_mean_over_axis_rows(self):
        assert np.array_equal(
            ops.mean_over_axis(t([[2.0, 4.0], [6.0, 8.0]]), axis=0).data, [4.0, 6.0]
        )

    def test_reshape_preserves_order(self):
        x = t(np.arange(6.0).reshape(2, 3))
        assert np.array_equal(ops.reshape(x, (3, 2)).data, np.arange(6.0).reshape(3, 2))

    def test_transpose(self):
        x = t(np.arange(6.0).reshape(2, 3))
        assert np.array_equal(ops.transpose(x).data, x.data.T)

    def test_to_patches_layout(self):
        # 1 x 2 x 1 x 2 map: patch 0 holds spatial (0,0) across channels
        x = t(np.arange(4.0).reshape(1, 2, 1, 2))
        p = ops.to_patches(x)
        assert p.shape == (1, 2, 2)
        assert np.array_equal(p.data[0, 0], [0.0, 2.0])
        assert np.array_equal(p.data[0, 1], [1.0, 3.0])

    def test_patches_round_trip(self):
        rng = np.random.default_rng(1)
        x = t(rng.normal(size=(2, 3, 2, 4)))
        back = ops.from_patches(ops.to_patches(x), 2, 4)
        assert np.array_equal(back.data, x.data)

    def test_patch_index_formula_under_hw_swap(self):
        rng = np.random.default_rng(2)
        m = rng.normal(size=(1, 2, 2, 3))
        p = ops.to_patches(t(m)).data[0]
        h, w = 2, 3
        for i in range(h * w):
            assert np.array_equal(p[i], m[0, :, i // w, i % w])
        swapped = ops.to_patches(t(m.transpose(0, 1, 3, 2))).data[0]
        for i in range(h * w):
            # transposed grid reorders patches per i = h * W + w
            assert np.array_equal(swapped[(i % w) * h + i // w], p[i])


class TestBackwardRules:
    def test_matmul_fd(self):
        rng = np.random.default_rng(10)
        a = t(rng.normal(size=(3, 4)))
        b = t(rng.normal(size=(4, 2)))
        err = max_rel_err(lambda: ops.sum_all(ops.mul(ops.matmul(a, b), ops.matmul(a, b))), [a, b])
        assert err < FD_TOL

    def test_relu_fd_away_from_zero(self):
        rng = np.random.default_rng(11)
        vals = rng.normal(size=(4, 3))
        vals[np.abs(vals) < 1e-3] = 0.5
        x = t(vals)
        err = max_rel_err(lambda: ops.sum_all(ops.mul(ops.relu(x), ops.relu(x))), [x])
        assert err < FD_TOL

    @pytest.mark.parametrize(
        "name,build",
        [
            ("add", lambda a, b: ops.add(a, b)),
            ("sub", lambda a, b: ops.sub(a, b)),
            ("mul", lambda a, b: ops.mul(a, b)),
        ],
    )
    def test_binary_elementwise_fd(self, name, build):
        rng = np.random.default_rng(12)
        a = t(rng.normal(size=(3, 3)))
        b = t(rng.normal(size=(3, 3)))

        def loss():
            y = build(a, b)
            return ops.sum_all(ops.mul(y, y))

        assert max_rel_err(loss, [a, b]) < FD_TOL

    @pytest.mark.parametrize(
        "name,build",
        [
            ("scale", lambda x: ops.scale(x, -1.7)),
            ("add_scalar", lambda x: ops.add_scalar(x, 0.3)),
            ("mean_axis0", lambda x: ops.mean_over_axis(x, 0)),
            ("mean_axis1", lambda x: ops.mean_over_axis(x, 1)),
            ("mean_all", lambda x: ops.mean_all(x)),
            ("reshape", lambda x: ops.reshape(x, (2, 6))),
            ("transpose", lambda x: ops.transpose(x)),
            ("softmax", lambda x: ops.softmax_rows(x)),
            ("log_softmax", lambda x: ops.log_softmax_rows(x)),
        ],
    )
    def test_unary_fd(self, name, build):
        rng = np.random.default_rng(13)
        x = t(rng.normal(size=(3, 4)))
        w = rng.normal(size=(3, 4) if name not in ("reshape",) else (2, 6))
        if name in ("mean_axis0",):
            w = w[0]
        elif name == "mean_axis1":
            w = w[:, 0]
        elif name == "mean_all":
            w = np.asarray(1.0)
        elif name == "transpose":
            w = w.T

        def loss():
            y = build(x)
            prod = ops.mul(y, Tensor(w)) if w.shape == y.shape else ops.scale(y, 2.0)
            return ops.sum_all(prod) if prod.data.shape != () else prod

        assert max_rel_err(loss, [x]) < FD_TOL

    def test_concat_slice_fd(self):
        rng = np.random.default_rng(14)
        a = t(rng.normal(size=(3, 2)))
        b = t(rng.normal(size=(3, 3)))

        def loss():
            y = ops.concat([a, b], axis=1)
            parts = ops.split_channels(ops.concat([y, y], axis=1), 2)
            return ops.sum_all(ops.mul(parts[0], parts[1]))

        assert max_rel_err(loss, [a, b]) < FD_TOL

    def test_gather_pairs_fd(self):
        rng = np.random.default_rng(15)
        x = t(rng.normal(size=(4, 4)))
        rows = np.array([0, 1, 1, 3])
        cols = np.array([2, 0, 0, 3])  # repeated pair exercises scatter-add

        def loss():
            g = ops.gather_pairs(x, rows, cols)
            return ops.sum_all(ops.mul(g, g))

        assert max_rel_err(loss, [x]) < FD_TOL

    def test_add_rowvec_fd(self):
        rng = np.random.default_rng(16)
        x = t(rng.normal(size=(3, 4)))
        v = t(rng.normal(size=4))

        def loss():
            y = ops.add_rowvec(x, v)
            return ops.sum_all(ops.mul(y, y))

        assert max_rel_err(loss, [x, v]) < FD_TOL

    def test_sqrt_fd(self):
        rng = np.random.default_rng(17)
        x = t(rng.uniform(0.5, 2.0, size=(3, 3)))

        def loss():
            return ops.sum_all(ops.sqrt(x))

        assert max_rel_err(loss, [x]) < FD_TOL

    def test_pairwise_sqdist_fd(self):
        rng = np.random.default_rng(18)
        e = t(rng.normal(size=(5, 3)))
        w = rng.normal(size=(5, 5))

        def loss():
            return ops.sum_all(ops.mul(ops.pairwise_sqdist(e), Tensor(w)))

        assert max_rel_err(loss, [e]) < FD_TOL

    def test_erase_greater_fd_through_retained(self):
        rng = np.random.default_rng(19)
        x = t(rng.normal(size=(4, 4)))
        thr = float(np.median(x.data))

        def loss():
            y = ops.erase_greater(x, thr)
            return ops.sum_all(ops.mul(y, y))

        assert max_rel_err(loss, [x]) < FD_TOL

    def test_stack_slice_axis0_fd(self):
        rng = np.random.default_rng(20)
        x = t(rng.normal(size=(3, 2, 4)))

        def loss():
            rows = [ops.mean_over_axis(ops.slice_axis0(x, i), 0) for i in range(3)]
            m = ops.stack_rows(rows)
            return ops.sum_all(ops.mul(m, m))

        assert max_rel_err(loss, [x]) < FD_TOL

    def test_conv2d_fd(self):
        rng = np.random.default_rng(21)
        x = t(rng.normal(size=(2, 3, 5, 5)))
        w = t(rng.normal(size=(4, 3, 3, 3)) * 0.4)
        b = t(rng.normal(size=4) * 0.1)

        def loss():
            y = ops.conv2d(x, w, b, stride=2, pad=1)
            return ops.sum_all(ops.mul(y, y))

        assert max_rel_err(loss, [x, w, b], max_coords=40) < FD_TOL


class TestBatchNorm:
    def test_training_hand_example(self):
        from patchgraph.ops import BNState, batch_norm_1d

        state = BNState(1)
        x = t([[1.0], [3.0]])
        y = batch_norm_1d(x, state, training=True)
        # (x - 2) / sqrt(1 + 1e-5)
        expect = np.array([[-1.0], [1.0]]) / np.sqrt(1.0 + 1e-5)
        assert np.allclose(y.data, expect, atol=1e-12)

    def test_eval_identity_with_unit_stats(self):
        from patchgraph.ops import BNState, batch_norm_1d

        state = BNState(3, eps=0.0)
        x = t(np.random.default_rng(5).normal(size=(4, 3)))
        y = batch_norm_1d(x, state, training=False)
        assert np.allclose(y.data, x.data, atol=1e-12)

    def test_training_needs_two_samples(self):
        from patchgraph.ops import BNState, batch_norm_1d

        with pytest.raises(ShapeError):
            batch_norm_1d(t(np.ones((1, 3))), BNState(3), training=True)

    def test_running_stats_update(self):
        from patchgraph.ops import BNState, batch_norm_1d

        state = BNState(1)
        x = t([[1.0], [3.0]])
        batch_norm_1d(x, state, training=True)
        assert np.allclose(state.running_mean, 0.9 * 0.0 + 0.1 * 2.0)
        assert np.allclose(state.running_var, 0.9 * 1.0 + 0.1 * 1.0)

    def test_train_mode_fd(self):
        from patchgraph.ops import BNState, batch_norm_1d

        rng = np.random.default_rng(6)
        state = BNState(3)
        state.gamma.data = rng.normal(size=3)
        state.shift.data = rng.normal(size=3)
        x = t(rng.normal(size=(5, 3)))
        w = rng.normal(size=(5, 3))

        def loss():
            # freeze running stats so repeated forwards are identical
            state.running_mean = np.zeros(3)
            state.running_var = np.ones(3)
            y = batch_norm_1d(x, state, training=True)
            return ops.sum_all(ops.mul(y, Tensor(w)))

        assert max_rel_err(loss, [x, state.gamma, state.shift]) < 1e-4

    def test_eval_mode_fd(self):
        from patchgraph.ops import BNState, batch_norm_1d

        rng = np.random.default_rng(7)
        state = BNState(3)
        state.running_mean = rng.normal(size=3)
        state.running_var = rng.uniform(0.5, 2.0, size=3)
        x = t(rng.normal(size=(4, 3)))

        def loss():
            y = batch_norm_1d(x, state, training=False)
            return ops.sum_all(ops.mul(y, y))

        assert max_rel_err(loss, [x, state.gamma, state.shift]) < FD_TOL


class TestTape:
    def test_sum_gradient_is_ones(self):
        x = t([1.0, 2.0, 3.0])
        with Tape() as tape:
            y = ops.sum_all(x)
        backward(y, tape)
        assert np.array_equal(x.grad, [1.0, 1.0, 1.0])

    def test_quadratic_gradient(self):
        x = t([2.0, 3.0])
        with Tape() as tape:
            y = ops.sum_all(ops.mul(x, x))
        backward(y, tape)
        assert np.array_equal(x.grad, [4.0, 6.0])

    def test_fanout_accumulates_both_paths(self):
        x = t([1.5, -0.5])
        with Tape() as tape:
            twice = ops.add(x, x)
            y = ops.sum_all(twice)
        backward(y, tape)
        x2 = t([1.5, -0.5])
        with Tape() as tape2:
            y2 = ops.sum_all(ops.scale(x2, 2.0))
        backward(y2, tape2)
        assert np.array_equal(x.grad, x2.grad)

    def test_non_scalar_loss_rejected(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            y = ops.mul(x, x)
        with pytest.raises(GradientError):
            backward(y, tape)

    def test_double_backward_rejected(self):
        x = t([1.0])
        with Tape() as tape:
            y = ops.sum_all(x)
        backward(y, tape)
        with pytest.raises(GradientError):
            backward(y, tape)

    def test_no_recording_without_tape(self):
        x = t([1.0, 2.0])
        with Tape() as tape:
            pass
        y = ops.sum_all(ops.mul(x, x))  # outside any tape
        assert len(tape) == 0
        assert y.item() == 5.0

    def test_gradients_deterministic(self):
        rng = np.random.default_rng(8)
        data = rng.normal(size=(4, 4))

        def run():
            x = t(data.copy())
            w = t(np.ones((4, 4)))
            with Tape() as tape:
                y = ops.sum_all(ops.softmax_rows(ops.matmul(x, w)))
            backward(y, tape)
            return x.grad.copy(), y.item()

        g1, v1 = run()
        g2, v2 = run()
        assert np.array_equal(g1, g2) and v1 == v2

    def test_forward_outputs_finite_on_finite_inputs(self):
        rng = np.random.default_rng(9)
        x = t(rng.normal(size=(5, 6)) * 100)
        y = ops.softmax_rows(ops.matmul(x, t(rng.normal(size=(6, 5)))))
        assert np.isfinite(y.data).all()
