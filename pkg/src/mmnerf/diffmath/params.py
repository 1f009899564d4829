from __future__ import annotations

from typing import Iterator

import numpy as np

from ..errors import ContractError, NonFiniteError
from .tape import Tape, Tensor


class ParameterStore:
    """Named trainable arrays, each paired with a same-shaped gradient buffer."""

    def __init__(self, dtype=np.float64):
        self.dtype = np.dtype(dtype)
        self.values: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}

    def add(self, name: str, value) -> str:
        if name in self.values:
            raise ContractError(f"parameter {name!r} already exists")
        value = np.array(value, dtype=self.dtype)
        if not np.all(np.isfinite(value)):
            raise NonFiniteError(f"parameter {name!r} initialised with non-finite values")
        self.values[name] = value
        self.grads[name] = np.zeros_like(value)
        return name

    def __contains__(self, name):
        return name in self.values

    def __getitem__(self, name) -> np.ndarray:
        return self.values[name]

    def __iter__(self) -> Iterator[str]:
        return iter(self.values)

    def __len__(self):
        return len(self.values)

    def names(self) -> list[str]:
        return list(self.values)

    def shapes(self) -> dict[str, tuple]:
        return {k: v.shape for k, v in self.values.items()}

    def size(self) -> int:
        return int(sum(v.size for v in self.values.values()))

    def set(self, name: str, value) -> None:
        value = np.asarray(value, dtype=self.dtype)
        if value.shape != self.values[name].shape:
            raise ContractError(f"shape mismatch for {name!r}: {value.shape} vs {self.values[name].shape}")
        self.values[name][...] = value

    def var(self, name: str, tape: Tape | None) -> Tensor:
        """Leaf tensor for ``name``; tracked when a tape is given."""
        return Tensor(self.values[name], tape, param=name if tape is not None else None, store=self)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g.fill(0.0)

    def check_finite(self) -> None:
        for name, v in self.values.items():
            if not np.all(np.isfinite(v)):
                raise NonFiniteError(f"parameter {name!r} holds non-finite values")

    def copy(self) -> "ParameterStore":
        other = ParameterStore(self.dtype)
        for k, v in self.values.items():
            other.values[k] = v.copy()
            other.grads[k] = self.grads[k].copy()
        return other
