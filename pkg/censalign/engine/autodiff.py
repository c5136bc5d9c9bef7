"""
Reverse-mode automatic differentiation over dense numpy arrays.

Each Tensor records the operation that produced it, its parents and a
closure that pushes its adjoint back to them. ``backward`` walks the graph in
reverse topological order exactly once per node. Parents are kept in tuples
(not sets) so the traversal order, and therefore every floating-point sum,
is identical across runs.
"""

import logging
from typing import Callable, Dict, List, Mapping, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import expit

from censalign.exceptions import NumericalError, ShapeError

logger = logging.getLogger(__name__)

ArrayLike = Union[float, int, np.ndarray, "Tensor"]


def _unbroadcast(grad: np.ndarray, shape: Tuple[int, ...]) -> np.ndarray:
    """Sum ``grad`` down to ``shape`` after numpy broadcasting."""
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad


class Tensor:
    """A node of the computation graph holding a float64 array."""

    __array_priority__ = 100

    def __init__(
        self,
        data: ArrayLike,
        parents: Tuple["Tensor", ...] = (),
        op: str = "leaf",
        requires_grad: bool = False,
        name: Optional[str] = None,
    ):
        self.data = np.array(data, dtype=float)
        self.parents = parents
        self.op = op
        self.name = name
        self.requires_grad = requires_grad or any(p.requires_grad for p in parents)
        self.grad: Optional[np.ndarray] = None
        self._backward: Callable[[], None] = lambda: None

    # ------------------------------------------------------------------
    # Construction helpers
    # ------------------------------------------------------------------

    @staticmethod
    def lift(value: ArrayLike) -> "Tensor":
        return value if isinstance(value, Tensor) else Tensor(value, op="const")

    @classmethod
    def parameter(cls, data: ArrayLike, name: str) -> "Tensor":
        return cls(data, requires_grad=True, name=name)

    @property
    def shape(self) -> Tuple[int, ...]:
        return self.data.shape

    @property
    def ndim(self) -> int:
        return self.data.ndim

    def item(self) -> float:
        return float(self.data)

    def __repr__(self) -> str:
        label = self.name or self.op
        return f"Tensor({label}, shape={self.shape})"

    def _accumulate(self, grad: np.ndarray) -> None:
        if not self.requires_grad:
            return
        grad = _unbroadcast(grad, self.shape)
        self.grad = grad if self.grad is None else self.grad + grad

    # ------------------------------------------------------------------
    # Elementwise arithmetic
    # ------------------------------------------------------------------

    def __add__(self, other: ArrayLike) -> "Tensor":
        other = Tensor.lift(other)
        out = Tensor(self.data + other.data, (self, other), "add")

        def _backward():
            self._accumulate(out.grad)
            other._accumulate(out.grad)

        out._backward = _backward
        return out

    def __radd__(self, other: ArrayLike) -> "Tensor":
        return self + other

    def __neg__(self) -> "Tensor":
        out = Tensor(-self.data, (self,), "neg")

        def _backward():
            self._accumulate(-out.grad)

        out._backward = _backward
        return out

    def __sub__(self, other: ArrayLike) -> "Tensor":
        other = Tensor.lift(other)
        out = Tensor(self.data - other.data, (self, other), "sub")

        def _backward():
            self._accumulate(out.grad)
            other._accumulate(-out.grad)

        out._backward = _backward
        return out

    def __rsub__(self, other: ArrayLike) -> "Tensor":
        return Tensor.lift(other) - self

    def __mul__(self, other: ArrayLike) -> "Tensor":
        other = Tensor.lift(other)
        out = Tensor(self.data * other.data, (self, other), "mul")

        def _backward():
            self._accumulate(out.grad * other.data)
            other._accumulate(out.grad * self.data)

        out._backward = _backward
        return out

    def __rmul__(self, other: ArrayLike) -> "Tensor":
        return self * other

    def __truediv__(self, other: ArrayLike) -> "Tensor":
        other = Tensor.lift(other)
        out = Tensor(self.data / other.data, (self, other), "div")

        def _backward():
            self._accumulate(out.grad / other.data)
            other._accumulate(-out.grad * self.data / other.data**2)

        out._backward = _backward
        return out

    def __rtruediv__(self, other: ArrayLike) -> "Tensor":
        return Tensor.lift(other) / self

    def __pow__(self, exponent: float) -> "Tensor":
        if not isinstance(exponent, (int, float)):
            raise TypeError("only constant real exponents are supported")
        out = Tensor(self.data**exponent, (self,), f"pow{exponent}")

        def _backward():
            self._accumulate(out.grad * exponent * self.data ** (exponent - 1))

        out._backward = _backward
        return out

    def square(self) -> "Tensor":
        out = Tensor(self.data * self.data, (self,), "square")

        def _backward():
            self._accumulate(out.grad * 2.0 * self.data)

        out._backward = _backward
        return out

    def abs(self) -> "Tensor":
        out = Tensor(np.abs(self.data), (self,), "abs")

        def _backward():
            self._accumulate(out.grad * np.sign(self.data))

        out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # Nonlinearities
    # ------------------------------------------------------------------

    def exp(self) -> "Tensor":
        out = Tensor(np.exp(self.data), (self,), "exp")

        def _backward():
            self._accumulate(out.grad * out.data)

        out._backward = _backward
        return out

    def log(self) -> "Tensor":
        out = Tensor(np.log(self.data), (self,), "log")

        def _backward():
            self._accumulate(out.grad / self.data)

        out._backward = _backward
        return out

    def sigmoid(self) -> "Tensor":
        out = Tensor(expit(self.data), (self,), "sigmoid")

        def _backward():
            self._accumulate(out.grad * out.data * (1.0 - out.data))

        out._backward = _backward
        return out

    def tanh(self) -> "Tensor":
        out = Tensor(np.tanh(self.data), (self,), "tanh")

        def _backward():
            self._accumulate(out.grad * (1.0 - out.data**2))

        out._backward = _backward
        return out

    def relu(self) -> "Tensor":
        out = Tensor(np.maximum(self.data, 0.0), (self,), "relu")

        def _backward():
            self._accumulate(out.grad * (self.data > 0))

        out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # Linear algebra and reductions
    # ------------------------------------------------------------------

    def __matmul__(self, other: ArrayLike) -> "Tensor":
        other = Tensor.lift(other)
        if self.ndim < 2 or other.ndim < 2:
            raise ShapeError(
                f"matmul needs operands of rank >= 2, got {self.shape} @ {other.shape}"
            )
        if self.shape[-1] != other.shape[-2]:
            raise ShapeError(f"matmul shape mismatch: {self.shape} @ {other.shape}")
        out = Tensor(np.matmul(self.data, other.data), (self, other), "matmul")

        def _backward():
            self._accumulate(np.matmul(out.grad, np.swapaxes(other.data, -1, -2)))
            other._accumulate(np.matmul(np.swapaxes(self.data, -1, -2), out.grad))

        out._backward = _backward
        return out

    def sum(self, axis: Optional[Union[int, Tuple[int, ...]]] = None, keepdims: bool = False) -> "Tensor":
        out = Tensor(self.data.sum(axis=axis, keepdims=keepdims), (self,), "sum")

        def _backward():
            grad = out.grad
            if axis is not None and not keepdims:
                grad = np.expand_dims(grad, axis)
            self._accumulate(np.broadcast_to(grad, self.shape).copy())

        out._backward = _backward
        return out

    def mean(self, axis: Optional[int] = None) -> "Tensor":
        count = self.data.size if axis is None else self.shape[axis]
        return self.sum(axis=axis) / float(count)

    def reshape(self, *shape: int) -> "Tensor":
        out = Tensor(self.data.reshape(*shape), (self,), "reshape")

        def _backward():
            self._accumulate(out.grad.reshape(self.shape))

        out._backward = _backward
        return out

    def transpose(self) -> "Tensor":
        """Swap the last two axes."""
        out = Tensor(np.swapaxes(self.data, -1, -2), (self,), "transpose")

        def _backward():
            self._accumulate(np.swapaxes(out.grad, -1, -2))

        out._backward = _backward
        return out

    def __getitem__(self, index) -> "Tensor":
        out = Tensor(self.data[index], (self,), "getitem")

        def _backward():
            grad = np.zeros_like(self.data)
            np.add.at(grad, index, out.grad)
            self._accumulate(grad)

        out._backward = _backward
        return out

    # ------------------------------------------------------------------
    # Reverse pass
    # ------------------------------------------------------------------

    def _topological_order(self) -> List["Tensor"]:
        order: List[Tensor] = []
        visited = set()
        stack: List[Tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in visited or not node.requires_grad:
                continue
            visited.add(id(node))
            stack.append((node, True))
            for parent in reversed(node.parents):
                if id(parent) not in visited:
                    stack.append((parent, False))
        return order

    def backward(self) -> None:
        """Propagate d(self)/d(node) into ``grad`` of every node that requires it."""
        if self.data.size != 1:
            raise ShapeError(f"backward needs a scalar root, got shape {self.shape}")
        order = self._topological_order()
        for node in order:
            node.grad = None
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node.grad is None:
                continue
            if not np.all(np.isfinite(node.grad)):
                raise NumericalError(
                    f"non-finite adjoint at node '{node.name or node.op}'",
                    node_tag=node.name or node.op,
                )
            node._backward()


def concat(tensors: Sequence[Tensor], axis: int = -1) -> Tensor:
    tensors = [Tensor.lift(t) for t in tensors]
    out = Tensor(
        np.concatenate([t.data for t in tensors], axis=axis), tuple(tensors), "concat"
    )
    sizes = np.cumsum([t.shape[axis] for t in tensors])[:-1]

    def _backward():
        for t, grad in zip(tensors, np.split(out.grad, sizes, axis=axis)):
            t._accumulate(grad)

    out._backward = _backward
    return out


def stack(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    tensors = [Tensor.lift(t) for t in tensors]
    out = Tensor(np.stack([t.data for t in tensors], axis=axis), tuple(tensors), "stack")

    def _backward():
        for i, t in enumerate(tensors):
            t._accumulate(np.take(out.grad, i, axis=axis))

    out._backward = _backward
    return out


def forward_backward(root: Tensor, params: Mapping[str, Tensor]) -> Dict[str, np.ndarray]:
    """
    Gradient of a scalar root with respect to every named leaf parameter.

    Raises:
        ShapeError: root is not a scalar
        NumericalError: root or an adjoint is NaN/inf (tagged with the node)
    """
    if root.data.size != 1:
        raise ShapeError(f"root must be scalar, got shape {root.shape}")
    if not np.isfinite(root.data).all():
        raise NumericalError(
            f"non-finite forward value at node '{root.name or root.op}'",
            node_tag=root.name or root.op,
        )
    for p in params.values():
        p.grad = None
    root.backward()
    return {
        name: (p.grad.copy() if p.grad is not None else np.zeros_like(p.data))
        for name, p in params.items()
    }


def gradient_check(
    fn: Callable[[], Tensor],
    params: Mapping[str, Tensor],
    h: float = 1e-5,
    floor: float = 1e-4,
) -> float:
    """
    Largest elementwise relative error between autodiff and central differences.

    ``fn`` must rebuild the graph from the current parameter values on every call.
    """
    analytic = forward_backward(fn(), params)
    worst = 0.0
    for name, p in params.items():
        numeric = np.zeros_like(p.data)
        flat = p.data.reshape(-1)
        for i in range(flat.size):
            original = flat[i]
            flat[i] = original + h
            upper = fn().item()
            flat[i] = original - h
            lower = fn().item()
            flat[i] = original
            numeric.reshape(-1)[i] = (upper - lower) / (2.0 * h)
        err = np.abs(analytic[name] - numeric) / np.maximum(
            np.abs(analytic[name]) + np.abs(numeric), floor
        )
        if err.size:
            worst = max(worst, float(err.max()))
    logger.debug("gradient check max relative error %.3e", worst)
    return worst
