import threading

import numpy as np
import pytest

from gazetat import ops
from gazetat.errors import GradientError
from gazetat.tensor import Tape, Tensor, get_default_dtype, grad, no_grad, set_default_dtype


def test_backward_accumulates_into_leaves():
    x = Tensor(np.array([1.0, 2.0, 3.0]), requires_grad=True)
    y = (x * x).sum()
    y.backward()
    np.testing.assert_allclose(x.grad, [2.0, 4.0, 6.0])

    (x * 3.0).sum().backward()
    np.testing.assert_allclose(x.grad, [5.0, 7.0, 9.0])


def test_shared_subexpression_gets_both_paths():
    x = Tensor(np.array([2.0]), requires_grad=True)
    h = x * x
    loss = (h + h * 3.0).sum()
    loss.backward()
    np.testing.assert_allclose(x.grad, [16.0])


def test_backward_clears_the_graph():
    x = Tensor(np.ones(3), requires_grad=True)
    hidden = ops.relu(x * 2.0)
    loss = hidden.sum()
    loss.backward()
    assert loss._ctx is None
    assert hidden._ctx is None


def test_backward_needs_a_scalar():
    x = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(GradientError, match="scalar"):
        (x * 2.0).backward()


def test_backward_on_constant_raises():
    with pytest.raises(GradientError):
        Tensor(np.ones(1)).backward()


def test_grad_leaves_grad_fields_alone():
    x = Tensor(np.array([1.0, -2.0]), requires_grad=True)
    w = Tensor(np.array([3.0, 4.0]), requires_grad=True)
    gx, gw = grad((x * w).sum(), [x, w])
    np.testing.assert_allclose(gx, [3.0, 4.0])
    np.testing.assert_allclose(gw, [1.0, -2.0])
    assert x.grad is None and w.grad is None


def test_grad_of_unused_input_is_zero():
    x = Tensor(np.ones(2), requires_grad=True)
    unused = Tensor(np.ones((2, 2)), requires_grad=True)
    _, g = grad(x.sum(), [x, unused])
    assert g.shape == (2, 2) and not g.any()


def test_no_grad_records_nothing():
    x = Tensor(np.ones(2), requires_grad=True)
    with no_grad():
        y = x * 2.0
    assert not y.requires_grad
    assert y._ctx is None


def test_no_grad_is_per_thread():
    seen = {}

    def worker():
        seen["enabled"] = (Tensor(np.ones(1), requires_grad=True) * 2.0).requires_grad

    with no_grad():
        thread = threading.Thread(target=worker)
        thread.start()
        thread.join()
    assert seen["enabled"]


def test_ndarray_on_the_left_stays_differentiable():
    x = Tensor(np.array([1.0, 2.0]), requires_grad=True)
    y = np.array([3.0, 5.0]) * x
    assert isinstance(y, Tensor)
    y.sum().backward()
    np.testing.assert_allclose(x.grad, [3.0, 5.0])


def test_tape_lists_ops_inputs_first():
    x = Tensor(np.ones((2, 3)), requires_grad=True)
    loss = ops.sigmoid(ops.relu(x)).sum()
    tape = Tape.record(loss)
    assert tape.op_names() == ["relu", "sigmoid", "sum"]
    tape.clear()


def test_default_dtype_switch():
    set_default_dtype("float32")
    assert Tensor([1, 2]).dtype == np.float32
    set_default_dtype(np.float64)
    assert get_default_dtype() == np.float64
    with pytest.raises(ValueError):
        set_default_dtype("int32")
