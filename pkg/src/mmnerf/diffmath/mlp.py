from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import ContractError, NonFiniteError
from . import tape as T
from .params import ParameterStore

ACTIVATIONS = {
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "linear": T.identity,
}


@dataclass
class Mlp:
    """Fully connected network whose weights live in a ParameterStore.

    Hidden layers use ``hidden_activation``; the last layer uses
    ``output_activation``.  Weight entries are named ``{name}.w{i}`` and
    ``{name}.b{i}``.
    """

    name: str
    sizes: tuple[int, ...]
    output_activation: str = "linear"
    hidden_activation: str = "relu"

    def __post_init__(self):
        self.sizes = tuple(int(s) for s in self.sizes)
        if len(self.sizes) < 2 or min(self.sizes) < 1:
            raise ContractError(f"invalid layer sizes {self.sizes}")
        for act in (self.output_activation, self.hidden_activation):
            if act not in ACTIVATIONS:
                raise ContractError(f"unknown activation {act!r}")

    @property
    def in_width(self) -> int:
        return self.sizes[0]

    @property
    def out_width(self) -> int:
        return self.sizes[-1]

    @property
    def n_layers(self) -> int:
        return len(self.sizes) - 1

    def param_names(self):
        for i in range(self.n_layers):
            yield f"{self.name}.w{i}"
            yield f"{self.name}.b{i}"

    def activations(self) -> list[str]:
        return [self.hidden_activation] * (self.n_layers - 1) + [self.output_activation]

    def init(self, store: ParameterStore, rng: np.random.Generator) -> None:
        """Glorot-uniform weights, zero biases."""
        for i, (fan_in, fan_out) in enumerate(zip(self.sizes[:-1], self.sizes[1:])):
            bound = np.sqrt(6.0 / (fan_in + fan_out))
            store.add(f"{self.name}.w{i}", rng.uniform(-bound, bound, size=(fan_in, fan_out)))
            store.add(f"{self.name}.b{i}", np.zeros(fan_out))

    def to_dict(self) -> dict:
        return {"name": self.name, "sizes": list(self.sizes),
                "output_activation": self.output_activation,
                "hidden_activation": self.hidden_activation}

    @classmethod
    def from_dict(cls, d: dict) -> "Mlp":
        return cls(d["name"], tuple(d["sizes"]), d["output_activation"], d["hidden_activation"])


def forward_mlp(mlp: Mlp, store: ParameterStore, inputs, tape: T.Tape | None = None) -> T.Tensor:
    """Run ``mlp`` on an (N, in_width) batch, recording on ``tape`` if given."""
    x = T.as_tensor(inputs)
    if x.value.ndim != 2 or x.shape[1] != mlp.in_width:
        raise ContractError(f"{mlp.name}: expected input (N, {mlp.in_width}), got {x.shape}")
    bad = ~np.isfinite(x.value)
    if bad.any():
        where = tuple(int(i) for i in np.argwhere(bad)[0])
        raise NonFiniteError(f"{mlp.name}: non-finite input at index {where}")
    for i, act in enumerate(mlp.activations()):
        w = store.var(f"{mlp.name}.w{i}", tape)
        b = store.var(f"{mlp.name}.b{i}", tape)
        x = ACTIVATIONS[act](T.matmul(x, w) + b)
    return x
