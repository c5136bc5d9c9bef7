import numpy as np
import pytest

from censalign.engine.autodiff import Tensor, concat, forward_backward, gradient_check, stack
from censalign.exceptions import NumericalError, ShapeError


def test_sigmoid_derivative_at_zero():
    x = Tensor.parameter(0.0, "x")
    grads = forward_backward(x.sigmoid(), {"x": x})
    assert grads["x"] == pytest.approx(0.25)


def test_product_rule():
    x, y = Tensor.parameter(2.0, "x"), Tensor.parameter(3.0, "y")
    grads = forward_backward(x * y, {"x": x, "y": y})
    assert (float(grads["x"]), float(grads["y"])) == (3.0, 2.0)


def test_shared_node_accumulates_adjoints():
    x = Tensor.parameter(3.0, "x")
    y = x * x + x
    assert float(forward_backward(y, {"x": x})["x"]) == 7.0


def test_broadcast_gradient_is_summed_back():
    x = Tensor.parameter(np.ones((2, 3)), "x")
    b = Tensor.parameter(np.zeros(3), "b")
    grads = forward_backward((x + b).sum(), {"x": x, "b": b})
    np.testing.assert_array_equal(grads["b"], [2.0, 2.0, 2.0])


def _composite(params):
    w, v = params["w"], params["v"]
    x = Tensor(np.array([[0.3, -1.2], [0.5, 0.8], [-0.4, 0.1]]))
    hidden = (x @ w).tanh()
    out = concat([hidden, (x @ v).sigmoid()], axis=1)
    picked = stack([out[0], out[2]], axis=0)
    return (picked.square() * 0.5 + picked.abs() + (hidden.exp() + 1.0).log().sum()).sum() / 3.0


def test_gradients_match_central_differences():
    rng = np.random.default_rng(0)
    params = {
        "w": Tensor.parameter(rng.normal(size=(2, 3)), "w"),
        "v": Tensor.parameter(rng.normal(size=(2, 2)), "v"),
    }
    assert gradient_check(lambda: _composite(params), params) < 1e-6


def test_backward_is_bitwise_deterministic():
    rng = np.random.default_rng(1)
    params = {
        "w": Tensor.parameter(rng.normal(size=(2, 3)), "w"),
        "v": Tensor.parameter(rng.normal(size=(2, 2)), "v"),
    }
    first = forward_backward(_composite(params), params)
    second = forward_backward(_composite(params), params)
    for name in params:
        assert first[name].tobytes() == second[name].tobytes()


def test_relu_passes_gradient_only_where_positive():
    x = Tensor.parameter(np.array([-1.0, 2.0]), "x")
    np.testing.assert_array_equal(forward_backward(x.relu().sum(), {"x": x})["x"], [0.0, 1.0])


def test_unused_parameter_gets_zero_gradient():
    x, unused = Tensor.parameter(1.0, "x"), Tensor.parameter(np.ones(2), "u")
    assert np.array_equal(forward_backward(x * 2.0, {"x": x, "u": unused})["u"], np.zeros(2))


def test_root_must_be_scalar():
    x = Tensor.parameter(np.ones(2), "x")
    with pytest.raises(ShapeError):
        forward_backward(x * 2.0, {"x": x})


def test_non_finite_root_is_reported():
    x = Tensor.parameter(1.0, "x")
    root = x * Tensor(np.inf)
    root.name = "loss"
    with pytest.raises(NumericalError) as excinfo:
        forward_backward(root, {"x": x})
    assert excinfo.value.node_tag == "loss"


def test_matmul_shape_mismatch():
    with pytest.raises(ShapeError):
        Tensor(np.ones((2, 3))) @ Tensor(np.ones((2, 3)))
