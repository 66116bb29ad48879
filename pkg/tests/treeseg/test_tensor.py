import numpy as np
import pytest

from src.treeseg.domain import tensor as T
from src.treeseg.domain.errors import GradientError, NonFiniteError, ShapeMismatchError
from src.treeseg.domain.tensor import Tensor, apply_op, debug_mode, no_grad, precision


def test_default_dtype_is_float32():
    assert Tensor([1.0, 2.0]).dtype == np.float32


def test_precision_context_switches_and_restores_dtype():
    with precision(np.float64):
        assert Tensor([1.0]).dtype == np.float64
    assert Tensor([1.0]).dtype == np.float32


def test_add_and_mul_gradients():
    with precision(np.float64):
        a = Tensor([1.0, 2.0, 3.0], requires_grad=True)
        b = Tensor([4.0, 5.0, 6.0], requires_grad=True)
        ((a * b) + a).sum().backward()

    np.testing.assert_allclose(a.grad, [5.0, 6.0, 7.0])
    np.testing.assert_allclose(b.grad, [1.0, 2.0, 3.0])


def test_gradients_accumulate_on_reused_leaf():
    with precision(np.float64):
        x = Tensor([2.0], requires_grad=True)
        (x * x + x * 3.0).sum().backward()
    assert x.grad[0] == pytest.approx(2 * 2.0 + 3.0)


def test_scalar_arithmetic_uses_affine():
    with precision(np.float64):
        x = Tensor([1.0, 2.0], requires_grad=True)
        y = (1.0 - x) * 2.0 / 4.0 + 1.0
        np.testing.assert_allclose(y.data, [1.0, 0.5])
        y.sum().backward()
    np.testing.assert_allclose(x.grad, [-0.5, -0.5])


def test_softmax_rows_sum_to_one():
    x = Tensor(np.random.default_rng(0).normal(size=(2, 5, 3, 3)))
    s = x.softmax(axis=1)
    np.testing.assert_allclose(s.data.sum(axis=1), 1.0, rtol=1e-5)


def test_log_clamps_zero_without_infinities():
    with precision(np.float64):
        x = Tensor([0.0, 1.0], requires_grad=True)
        y = x.log()
        assert np.all(np.isfinite(y.data))
        y.sum().backward()
    assert x.grad[0] == 0.0
    assert x.grad[1] == pytest.approx(1.0)


def test_group_sum_partitions_axis():
    with precision(np.float64):
        x = Tensor(np.arange(4.0).reshape(4, 1), requires_grad=True)
        y = T.group_sum(x, [[0, 1], [2, 3]], axis=0)
        np.testing.assert_allclose(y.data.ravel(), [1.0, 5.0])
        (y * Tensor([[1.0], [10.0]])).sum().backward()
    np.testing.assert_allclose(x.grad.ravel(), [1.0, 1.0, 10.0, 10.0])


def test_group_sum_rejects_incomplete_partition():
    with pytest.raises(ShapeMismatchError):
        T.group_sum(Tensor(np.ones((3, 2))), [[0], [1]], axis=0)


def test_concat_and_slice_gradients():
    with precision(np.float64):
        a = Tensor(np.ones((1, 2, 2)), requires_grad=True)
        b = Tensor(np.ones((1, 3, 2)), requires_grad=True)
        joined = T.concat([a, b], axis=1)
        assert joined.shape == (1, 5, 2)
        joined[:, 1:3].sum().backward()
    np.testing.assert_allclose(a.grad, [[[0.0, 0.0], [1.0, 1.0]]])
    np.testing.assert_allclose(b.grad[0, 0], [1.0, 1.0])
    assert b.grad[0, 1:].sum() == 0.0


def test_pad_backward_crops():
    with precision(np.float64):
        x = Tensor(np.ones((2, 2)), requires_grad=True)
        y = T.pad(x, [(1, 1), (0, 2)])
        assert y.shape == (4, 4)
        y.sum().backward()
    np.testing.assert_allclose(x.grad, np.ones((2, 2)))


def test_elementwise_shape_mismatch_names_shapes():
    with pytest.raises(ShapeMismatchError) as exc:
        Tensor(np.ones((2, 3))) + Tensor(np.ones((3, 2)))
    assert exc.value.op == "add"
    assert exc.value.shapes == ((2, 3), (3, 2))


class TestGraphLifecycle:
    def test_second_backward_is_rejected(self):
        x = Tensor([1.0], requires_grad=True)
        loss = (x * 2.0).sum()
        loss.backward()
        with pytest.raises(GradientError):
            loss.backward()

    def test_non_scalar_loss_is_rejected(self):
        x = Tensor([1.0, 2.0], requires_grad=True)
        with pytest.raises(GradientError):
            (x * 2.0).backward()

    def test_loss_without_parameters_is_rejected(self):
        with pytest.raises(GradientError):
            Tensor([1.0]).sum().backward()

    def test_no_grad_records_nothing(self):
        x = Tensor([1.0], requires_grad=True)
        with no_grad():
            y = x * 3.0
        assert not y.requires_grad
        assert y.is_leaf

    def test_reset_graph_discards_pending_nodes(self):
        x = Tensor([1.0], requires_grad=True)
        _ = x * 2.0
        assert T.current_graph().nodes
        T.reset_graph()
        assert not T.current_graph().nodes


class TestDebugMode:
    def test_non_finite_output_raises_in_debug(self):
        x = Tensor([1.0])
        with debug_mode(True):
            with pytest.raises(NonFiniteError):
                apply_op("custom", [x], np.array([np.inf], dtype=np.float32), lambda g: (g,))

    def test_non_finite_output_passes_without_debug(self):
        x = Tensor([1.0])
        with debug_mode(False):
            out = apply_op("custom", [x], np.array([np.nan], dtype=np.float32), lambda g: (g,))
        assert np.isnan(out.data[0])


def test_register_op_refuses_duplicates():
    with pytest.raises(ValueError):
        T.register_op("add")(lambda a: (a, lambda g: (g,)))


def test_item_requires_single_value():
    assert Tensor([3.5]).item() == pytest.approx(3.5)
    with pytest.raises(ShapeMismatchError):
        Tensor([1.0, 2.0]).item()
