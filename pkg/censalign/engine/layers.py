"""
Neural building blocks on top of the autodiff Tensor: a two-layer ReLU MLP
and gated / vanilla recurrent cells with a masked sequence encoder.
"""

from typing import Dict, List, Optional, Sequence

import numpy as np

from censalign.engine.autodiff import Tensor
from censalign.exceptions import ShapeError


def init_uniform(rng: np.random.Generator, fan_in: int, shape) -> np.ndarray:
    """uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))"""
    bound = 1.0 / np.sqrt(fan_in)
    return rng.uniform(-bound, bound, size=shape)


class Module:
    """Named collection of parameter tensors."""

    name: str

    def __init__(self, name: str):
        self.name = name
        self._params: Dict[str, Tensor] = {}

    def _add(self, key: str, data: np.ndarray) -> Tensor:
        tensor = Tensor.parameter(data, name=f"{self.name}.{key}")
        self._params[key] = tensor
        return tensor

    def parameters(self) -> Dict[str, Tensor]:
        return {t.name: t for t in self._params.values()}

    def weights(self) -> List[Tensor]:
        """Weight matrices (no biases), the regularized subset."""
        return [t for key, t in self._params.items() if not key.startswith("b")]


class Mlp(Module):
    """out = W2 relu(W1 x + b1) + b2"""

    def __init__(
        self,
        in_dim: int,
        hidden: int,
        out_dim: int,
        rng: np.random.Generator,
        name: str = "mlp",
    ):
        super().__init__(name)
        self.in_dim, self.hidden, self.out_dim = in_dim, hidden, out_dim
        self.W1 = self._add("W1", init_uniform(rng, in_dim, (in_dim, hidden)))
        self.b1 = self._add("b1", init_uniform(rng, in_dim, (hidden,)))
        self.W2 = self._add("W2", init_uniform(rng, hidden, (hidden, out_dim)))
        self.b2 = self._add("b2", init_uniform(rng, hidden, (out_dim,)))

    def __call__(self, x: Tensor) -> Tensor:
        x = Tensor.lift(x)
        if x.shape[-1] != self.in_dim:
            raise ShapeError(
                f"{self.name}: input width {x.shape[-1]} != expected {self.in_dim}"
            )
        if x.ndim == 1:
            return self(x.reshape(1, self.in_dim)).reshape(self.out_dim)
        hidden = (x @ self.W1 + self.b1).relu()
        return hidden @ self.W2 + self.b2


def mlp_apply(mlp: Mlp, vector: np.ndarray) -> Tensor:
    """Apply an MLP to a single input vector."""
    return mlp(Tensor(np.asarray(vector, dtype=float)))


class GruCell(Module):
    """
    Gated recurrent cell:
        z = s(x Wz + h Uz + bz), r = s(x Wr + h Ur + br)
        n = tanh(x Wn + (r * h) Un + bn), h' = (1 - z) * n + z * h
    """

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, name: str = "gru"):
        super().__init__(name)
        self.in_dim, self.hidden = in_dim, hidden
        for gate in ("z", "r", "n"):
            setattr(self, f"W{gate}", self._add(f"W{gate}", init_uniform(rng, hidden, (in_dim, hidden))))
            setattr(self, f"U{gate}", self._add(f"U{gate}", init_uniform(rng, hidden, (hidden, hidden))))
            setattr(self, f"b{gate}", self._add(f"b{gate}", init_uniform(rng, hidden, (hidden,))))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        z = (x @ self.Wz + h @ self.Uz + self.bz).sigmoid()
        r = (x @ self.Wr + h @ self.Ur + self.br).sigmoid()
        n = (x @ self.Wn + (r * h) @ self.Un + self.bn).tanh()
        return (1.0 - z) * n + z * h


class VanillaRnnCell(Module):
    """h' = tanh(x W + h U + b)"""

    def __init__(self, in_dim: int, hidden: int, rng: np.random.Generator, name: str = "rnn"):
        super().__init__(name)
        self.in_dim, self.hidden = in_dim, hidden
        self.W = self._add("W", init_uniform(rng, hidden, (in_dim, hidden)))
        self.U = self._add("U", init_uniform(rng, hidden, (hidden, hidden)))
        self.b = self._add("b", init_uniform(rng, hidden, (hidden,)))

    def step(self, x: Tensor, h: Tensor) -> Tensor:
        return (x @ self.W + h @ self.U + self.b).tanh()


class SequenceEncoder:
    """Runs a recurrent cell over padded visit sequences from a zero state."""

    def __init__(self, cell):
        self.cell = cell

    def parameters(self) -> Dict[str, Tensor]:
        return self.cell.parameters()

    def weights(self) -> List[Tensor]:
        return self.cell.weights()

    def __call__(self, inputs: np.ndarray, visit_mask: Optional[np.ndarray] = None) -> Tensor:
        """
        Args:
            inputs: (B, M, in_dim) per-visit features
            visit_mask: (B, M) 1 for real visits, 0 for padding

        Returns:
            (B, H) hidden state after each sequence's last real visit
        """
        inputs = np.asarray(inputs, dtype=float)
        if inputs.ndim != 3 or inputs.shape[1] == 0:
            raise ShapeError(f"encoder needs a non-empty (B, M, F) input, got {inputs.shape}")
        if inputs.shape[2] != self.cell.in_dim:
            raise ShapeError(
                f"encoder input width {inputs.shape[2]} != expected {self.cell.in_dim}"
            )
        batch, n_visits, _ = inputs.shape
        h = Tensor(np.zeros((batch, self.cell.hidden)), op="h0")
        for m in range(n_visits):
            h_new = self.cell.step(Tensor(inputs[:, m, :], op="input"), h)
            if visit_mask is None or visit_mask[:, m].all():
                h = h_new
            else:
                keep = visit_mask[:, m : m + 1]
                h = h_new * keep + h * (1.0 - keep)
        return h


def rnn_encode(encoder: SequenceEncoder, sequence: Sequence[Sequence[float]]) -> Tensor:
    """Final hidden vector for one sequence of per-visit input vectors."""
    if len(sequence) == 0:
        raise ShapeError("cannot encode an empty sequence")
    inputs = np.asarray(sequence, dtype=float)[None, :, :]
    return encoder(inputs).reshape(encoder.cell.hidden)
