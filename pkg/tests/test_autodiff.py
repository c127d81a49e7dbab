import numpy as np
import pytest

from cornertrack.autodiff import ContractError, NumericError, Tape, grad_check
from cornertrack.losses import render_heatmap
from cornertrack.checks import GRAD_TOL, GRADIENT_CASES, brute_force_pool
from cornertrack.pooling import DIRECTIONS, pool_argmax_array
from cornertrack.tensor import Tensor


def distinct(rng, shape):
    """Entries spaced at least 0.01 apart, so no pooling ties."""
    n = int(np.prod(shape))
    return rng.permutation(np.arange(n) * 0.01 + 0.005).reshape(shape) - n * 0.005


class TestBackward:
    def test_sum_gives_ones(self):
        tape = Tape()
        x = tape.param(Tensor(np.arange(6.0).reshape(1, 1, 2, 3)))
        grads = tape.backward(tape.sum(x))
        assert np.array_equal(grads[x].data, np.ones((1, 1, 2, 3)))

    def test_square_at_three(self):
        tape = Tape()
        x = tape.param(Tensor([3.0]))
        grads = tape.backward(tape.sum(tape.mul(x, x)))
        assert grads[x].data.ravel().tolist() == [6.0]

    def test_unused_parameter_gets_zeros(self):
        tape = Tape()
        x = tape.param(Tensor([1.0, 2.0]))
        y = tape.param(Tensor([5.0]))
        grads = tape.backward(tape.sum(x))
        assert np.array_equal(grads[y].data.ravel(), [0.0])

    def test_gradients_accumulate_over_reuse(self):
        tape = Tape()
        x = tape.param(Tensor([2.0]))
        loss = tape.add_scalars(tape.sum(x), tape.sum(tape.scale(x, 3.0)))
        assert tape.backward(loss)[x].data.item() == 4.0

    def test_deterministic(self):
        rng = np.random.default_rng(0)
        x0 = Tensor(rng.normal(size=(1, 2, 5, 5)))
        w0 = Tensor(rng.normal(size=(3, 2, 3, 3)))

        def run():
            tape = Tape()
            x, w = tape.param(x0), tape.param(w0)
            y = tape.pool(tape.relu(tape.conv2d(x, w, padding=1)), "suffix_w")
            g = tape.backward(tape.sum(tape.sigmoid(y)))
            return g[x].data, g[w].data

        a, b = run(), run()
        assert all(np.array_equal(u, v) for u, v in zip(a, b))

    def test_relu_subgradient_at_zero(self):
        tape = Tape()
        x = tape.param(Tensor([0.0, 1.0, -1.0]))
        assert tape.backward(tape.sum(tape.relu(x)))[x].data.ravel().tolist() == [0.0, 1.0, 0.0]

    def test_loss_must_be_scalar(self):
        tape = Tape()
        x = tape.param(Tensor([1.0, 2.0]))
        with pytest.raises(ContractError):
            tape.backward(x)

    def test_foreign_node_rejected(self):
        a, b = Tape(), Tape()
        x = a.param(Tensor([1.0]))
        with pytest.raises(ContractError):
            b.add(x, x)


class TestPoolingGradient:
    @pytest.mark.parametrize("direction", sorted(DIRECTIONS))
    def test_routes_to_argmax(self, direction):
        rng = np.random.default_rng(3)
        x = rng.normal(size=(1, 1, 4, 6))
        tape = Tape()
        node = tape.param(Tensor(x))
        out = tape.pool(node, direction)
        assert np.array_equal(out.array, brute_force_pool(x, direction))
        up = rng.normal(size=x.shape)
        grad = tape.backward(tape.sum(tape.mul(out, tape.constant(up))))[node].data
        src = pool_argmax_array(x, direction)
        axis = DIRECTIONS[direction][0]
        expected = np.zeros_like(x)
        for idx in np.ndindex(x.shape):
            target = list(idx)
            target[axis] = src[idx]
            expected[tuple(target)] += up[idx]
        assert np.allclose(grad, expected, rtol=0, atol=1e-15)

    def test_ties_go_to_first_in_scan_order(self):
        x = np.array([[[[1.0, 3.0, 3.0, 2.0]]]])
        tape = Tape()
        node = tape.param(Tensor(x))
        grad = tape.backward(tape.sum(tape.pool(node, "prefix_w")))[node].data.ravel()
        assert grad.tolist() == [1.0, 3.0, 0.0, 0.0]
        tape = Tape()
        node = tape.param(Tensor(x))
        grad = tape.backward(tape.sum(tape.pool(node, "suffix_w")))[node].data.ravel()
        assert grad.tolist() == [0.0, 0.0, 3.0, 1.0]


class TestGradCheck:
    def test_focal_loss_fine_step(self):
        # target rendered the way training renders it: a Gaussian bump on one corner cell
        target = render_heatmap(8, 8, (4, 3), 2)
        for seed in range(5):
            pred = Tensor(np.random.default_rng(seed).uniform(0.05, 0.95, size=(1, 1, 8, 8)))
            report = grad_check(lambda p: p.tape.focal_loss(p, target), pred, step=1e-6)
            assert report.max_rel_err < 1e-6

    def test_sum_of_relu_away_from_zero(self):
        x = np.random.default_rng(1).choice([-1, 1], size=(1, 2, 4, 4)) * np.linspace(0.1, 2, 32).reshape(1, 2, 4, 4)
        report = grad_check(lambda n: n.tape.sum(n.tape.relu(n)), Tensor(x), step=1e-6)
        assert report.max_rel_err < 1e-6

    @pytest.mark.parametrize("direction", sorted(DIRECTIONS))
    def test_pooling_sum_distinct_entries(self, direction):
        x = distinct(np.random.default_rng(2), (1, 2, 6, 6))
        report = grad_check(lambda n: n.tape.sum(n.tape.pool(n, direction)), Tensor(x), step=1e-6)
        assert report.max_rel_err < 1e-6

    @pytest.mark.parametrize("name", sorted(GRADIENT_CASES))
    def test_registered_cases_few_seeds(self, name):
        for seed in range(3):
            assert GRADIENT_CASES[name](seed).max_rel_err < GRAD_TOL

    def test_detects_a_wrong_gradient(self):
        # x * x with one factor frozen as a constant: the tape sees half the derivative
        def half_tracked(n):
            return n.tape.sum(n.tape.mul(n, n.tape.constant(n.array)))

        report = grad_check(half_tracked, Tensor([1.5, -2.0]), step=1e-6)
        assert abs(report.max_rel_err - 0.5) < 1e-6
        assert not report.passed(1e-5)

    def test_non_finite_function_raises(self):
        with pytest.raises(NumericError):
            grad_check(lambda n: n.tape.sum(n.tape.scale(n, np.inf)), Tensor([1.0]))

    def test_step_must_be_positive(self):
        with pytest.raises(ValueError):
            grad_check(lambda n: n.tape.sum(n), Tensor([1.0]), step=0.0)
