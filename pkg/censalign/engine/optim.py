"""Adam, weight regularization and JSON-ready checkpoints for named parameter maps."""

from dataclasses import dataclass, field
from typing import Dict, Mapping, Sequence, Union

import numpy as np

from censalign.engine.autodiff import Tensor
from censalign.exceptions import ConfigError, ShapeError
from censalign.schemas import RegType


@dataclass
class AdamState:
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    t: int = 0
    m: Dict[str, np.ndarray] = field(default_factory=dict)
    v: Dict[str, np.ndarray] = field(default_factory=dict)


class Adam:
    """Bias-corrected Adam; ``step`` minimizes, i.e. p <- p - lr m^ / (sqrt(v^) + eps)."""

    def __init__(self, params: Mapping[str, Tensor], lr: float, beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
        self.params = dict(params)
        self.state = AdamState(lr=lr, beta1=beta1, beta2=beta2, eps=eps)
        for name, p in self.params.items():
            self.state.m[name] = np.zeros_like(p.data)
            self.state.v[name] = np.zeros_like(p.data)

    def step(self, grads: Mapping[str, np.ndarray]) -> None:
        s = self.state
        for name in self.params:
            if name not in grads:
                raise ShapeError(f"missing gradient for parameter {name}")
            if grads[name].shape != self.params[name].shape:
                raise ShapeError(
                    f"gradient shape {grads[name].shape} != parameter shape "
                    f"{self.params[name].shape} for {name}"
                )
        s.t += 1
        correction1 = 1.0 - s.beta1**s.t
        correction2 = 1.0 - s.beta2**s.t
        for name, p in self.params.items():
            g = grads[name]
            s.m[name] = s.beta1 * s.m[name] + (1.0 - s.beta1) * g
            s.v[name] = s.beta2 * s.v[name] + (1.0 - s.beta2) * g * g
            m_hat = s.m[name] / correction1
            v_hat = s.v[name] / correction2
            p.data = p.data - s.lr * m_hat / (np.sqrt(v_hat) + s.eps)


def regularization_penalty(weights: Sequence[Tensor], reg_type: RegType, strength: float) -> Tensor:
    """strength * sum |W| (L1) or strength * sum W^2 (L2) over weight matrices."""
    if reg_type is RegType.NONE or strength == 0.0 or not weights:
        return Tensor(0.0, op="const")
    if reg_type is RegType.L1:
        terms = [w.abs().sum() for w in weights]
    elif reg_type is RegType.L2:
        terms = [w.square().sum() for w in weights]
    else:
        raise ConfigError(f"Unknown regularization type: {reg_type}")
    total = terms[0]
    for term in terms[1:]:
        total = total + term
    return total * strength


def checkpoint_to_dict(params: Mapping[str, Union[Tensor, np.ndarray]]) -> Dict[str, dict]:
    out = {}
    for name in sorted(params):
        value = params[name]
        data = value.data if isinstance(value, Tensor) else np.asarray(value, dtype=float)
        out[name] = {"shape": list(data.shape), "data": [float(x) for x in data.reshape(-1)]}
    return out


def checkpoint_from_dict(payload: Mapping[str, dict]) -> Dict[str, np.ndarray]:
    params = {}
    for name, entry in payload.items():
        data = np.asarray(entry["data"], dtype=float)
        shape = tuple(entry["shape"])
        if data.size != int(np.prod(shape, dtype=int)):
            raise ShapeError(f"checkpoint entry {name}: {data.size} values for shape {shape}")
        params[name] = data.reshape(shape)
    return params
