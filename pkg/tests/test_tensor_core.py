import math

import numpy as np
import pytest

from src.tensor_core import (
    ComputeGraph,
    ShapeError,
    Tensor,
    check_gradients,
    finite_diff_check,
    grad_enabled,
    no_grad,
    ops,
)
from src.tensor_core.gradcheck import random_tensor


# =============================================================================
# Forward ops
# =============================================================================


class TestForwardOps:
    def test_matmul_identity(self, rng):
        a = rng.normal(size=(3, 3))
        out = ops.matmul(Tensor(np.eye(3)), Tensor(a))
        np.testing.assert_array_equal(out.data, a)

    def test_softmax_uniform(self):
        out = ops.softmax(Tensor([0.0, 0.0, 0.0]))
        np.testing.assert_allclose(out.data, [1 / 3, 1 / 3, 1 / 3])

    def test_softmax_rejects_empty_axis(self):
        with pytest.raises(ShapeError, match="softmax"):
            ops.softmax(Tensor(np.zeros((2, 0))))

    def test_layer_norm_matches_reference(self):
        x = [1.0, 2.0, 3.0]
        out = ops.layer_norm(Tensor(x), Tensor(np.ones(3)), Tensor(np.zeros(3)), eps=1e-5)
        mean = (1.0 + 2.0 + 3.0) / 3
        var = ((1 - mean) ** 2 + (2 - mean) ** 2 + (3 - mean) ** 2) / 3
        expected = [(v - mean) / math.sqrt(var + 1e-5) for v in x]
        np.testing.assert_allclose(out.data, expected, rtol=0, atol=1e-12)

    def test_gelu_tanh_approximation(self):
        x = 0.7
        expected = 0.5 * x * (1 + math.tanh(math.sqrt(2 / math.pi) * (x + 0.044715 * x ** 3)))
        assert ops.gelu(Tensor([x])).data[0] == pytest.approx(expected, abs=1e-12)

    def test_bias_add_broadcasts_trailing_axes(self, rng):
        x = rng.normal(size=(2, 3, 4))
        b = rng.normal(size=4)
        np.testing.assert_array_equal(ops.add(Tensor(x), Tensor(b)).data, x + b)

    @pytest.mark.parametrize(
        "op, args",
        [
            ("add", ((2, 3), (3, 2))),
            ("mul", ((2, 3), (2, 4))),
            ("matmul", ((2, 3), (4, 2))),
            ("mse", ((3,), (4,))),
        ],
    )
    def test_shape_mismatch_names_op_and_shapes(self, op, args):
        a, b = (Tensor(np.zeros(s)) for s in args)
        with pytest.raises(ShapeError) as info:
            getattr(ops, op)(a, b)
        assert info.value.op == op
        assert tuple(args[0]) in info.value.shapes

    def test_slice_concat_inverse(self, rng):
        x = Tensor(rng.normal(size=(4, 5)))
        parts = [ops.slice(x, 1, 0, 2), ops.slice(x, 1, 2, 5)]
        np.testing.assert_array_equal(ops.concat(parts, axis=1).data, x.data)

    def test_embedding_lookup(self, rng):
        table = Tensor(rng.normal(size=(6, 3)))
        out = ops.embedding(table, np.array([[0, 5], [2, 2]]))
        assert out.shape == (2, 2, 3)
        np.testing.assert_array_equal(out.data[1, 0], table.data[2])

    def test_forward_is_deterministic(self, rng):
        w = Tensor(rng.normal(size=(4, 4)))
        x = Tensor(rng.normal(size=(3, 4)))
        first = ops.softmax(ops.gelu(ops.matmul(x, w))).data
        second = ops.softmax(ops.gelu(ops.matmul(x, w))).data
        assert np.array_equal(first, second)


# =============================================================================
# Backward
# =============================================================================


class TestBackward:
    def test_sum_of_squares(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        ops.sum(ops.mul(x, x)).backward()
        np.testing.assert_array_equal(x.grad, [2.0, 4.0])

    def test_cross_entropy_symmetric_case(self):
        logits = Tensor([0.0, 0.0], requires_grad=True)
        ops.cross_entropy(logits, 0).backward()
        np.testing.assert_allclose(logits.grad, [-0.5, 0.5])

    def test_non_scalar_loss_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(ShapeError, match="backward"):
            ops.mul(x, x).backward()

    def test_gradients_accumulate(self, rng):
        x = Tensor(rng.normal(size=(3,)), requires_grad=True)
        loss = ops.sum(ops.gelu(x))
        loss.backward()
        once = x.grad.copy()
        loss.backward()
        np.testing.assert_array_equal(x.grad, 2.0 * once)

    def test_zero_grad(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        ops.sum(ops.mul(x, x)).backward()
        x.zero_grad()
        assert x.grad.shape == x.shape
        assert np.all(x.grad == 0.0)

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            assert not grad_enabled()
            y = ops.scale(x, 2.0)
        assert grad_enabled()
        assert not y.requires_grad and y.is_leaf

    def test_graph_is_topological(self, rng):
        x = Tensor(rng.normal(size=(2, 2)), requires_grad=True)
        y = ops.gelu(ops.matmul(x, x))
        loss = ops.sum(y)
        graph = ComputeGraph.from_root(loss)
        seen = set()
        for tensor in graph.order:
            assert all(p.id in seen for p in tensor._parents)
            seen.add(tensor.id)
        assert [n.op for n in graph.nodes] == ["matmul", "gelu", "sum"]
        assert graph.leaves() == [x]

    def test_shared_subexpression_visited_once(self):
        x = Tensor([3.0], requires_grad=True)
        y = ops.scale(x, 2.0)
        ops.sum(ops.add(y, y)).backward()
        np.testing.assert_array_equal(x.grad, [4.0])


# =============================================================================
# Finite differences
# =============================================================================


class TestFiniteDiff:
    def test_linear_function_exact(self, rng):
        x = random_tensor(rng, (5,))
        assert finite_diff_check(lambda t: ops.sum(t), x) < 1e-9

    def test_cube(self):
        x = Tensor([1.0], requires_grad=True)
        assert finite_diff_check(lambda t: ops.sum(ops.mul(ops.mul(t, t), t)), x, 1e-4) < 1e-6

    def test_eps_range(self):
        x = Tensor([1.0], requires_grad=True)
        with pytest.raises(ValueError):
            finite_diff_check(lambda t: ops.sum(t), x, eps=0.1)

    def test_non_finite_reported_as_failure(self):
        x = Tensor([0.0], requires_grad=True)

        def f(t):
            return Tensor.from_op(np.array(np.inf), (t,), "blowup", lambda g: (np.ones(1),))

        assert finite_diff_check(f, x) == math.inf

    @pytest.mark.parametrize(
        "name, fn, shape",
        [
            ("add", lambda x, c: ops.add(x, c), (3, 4)),
            ("mul", lambda x, c: ops.mul(x, c), (3, 4)),
            ("matmul", lambda x, c: ops.matmul(x, ops.transpose(c)), (3, 4)),
            ("transpose", lambda x, c: ops.transpose(x), (3, 4)),
            ("reshape", lambda x, c: ops.reshape(x, (4, 3)), (3, 4)),
            ("slice", lambda x, c: ops.slice(x, 1, 1, 3), (3, 4)),
            ("concat", lambda x, c: ops.concat([x, c], axis=0), (3, 4)),
            ("softmax", lambda x, c: ops.softmax(x), (3, 4)),
            ("layer_norm", lambda x, c: ops.layer_norm(x, Tensor(c.data[0]), Tensor(c.data[1])), (3, 4)),
            ("gelu", lambda x, c: ops.gelu(x), (3, 4)),
            ("scale", lambda x, c: ops.scale(x, -1.7), (3, 4)),
        ],
    )
    def test_op_gradients(self, rng, name, fn, shape):
        x = random_tensor(rng, shape)
        const = Tensor(rng.normal(size=shape))

        def f(t):
            out = fn(t, const)
            weights = Tensor(np.random.default_rng(7).normal(size=out.shape))
            return ops.sum(ops.mul(out, weights))

        assert finite_diff_check(f, x) < 1e-4, name

    def test_cross_entropy_and_mse_gradients(self, rng):
        x = random_tensor(rng, (4, 5))
        targets = np.array([0, 4, 2, 2])
        mask = np.array([1.0, 0.0, 1.0, 1.0])
        assert finite_diff_check(lambda t: ops.cross_entropy(t, targets, mask), x) < 1e-4
        target = rng.normal(size=(4, 5))
        assert finite_diff_check(lambda t: ops.mse(t, target), x) < 1e-4

    def test_embedding_gradient(self, rng):
        table = random_tensor(rng, (6, 3))
        ids = np.array([[1, 1], [4, 0]])
        weights = Tensor(rng.normal(size=(2, 2, 3)))
        assert finite_diff_check(lambda t: ops.sum(ops.mul(ops.embedding(t, ids), weights)), table) < 1e-4

    def test_two_layer_mlp(self, rng):
        params = {
            "w1": random_tensor(rng, (4, 6)),
            "b1": random_tensor(rng, (6,)),
            "w2": random_tensor(rng, (6, 2)),
        }
        x = Tensor(rng.normal(size=(5, 4)))
        target = rng.normal(size=(5, 2))

        def loss():
            hidden = ops.gelu(ops.add(ops.matmul(x, params["w1"]), params["b1"]))
            return ops.mse(ops.matmul(hidden, params["w2"]), target)

        report = check_gradients(loss, params)
        assert set(report) == {"w1", "b1", "w2"}
        assert max(report.values()) < 1e-4
