from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import NonFiniteError
from .params import ParameterStore


@dataclass
class AdamState:
    """Moment estimates and hyperparameters for Adam.

    ``lr_scale`` maps a parameter-name prefix to a multiplier on the base
    learning rate (feature grids usually want a larger step than MLPs).
    With ``decay_steps`` set, the rate decays exponentially to
    ``decay_to`` times its initial value over that many steps.
    """

    lr: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    step: int = 0
    decay_steps: int | None = None
    decay_to: float = 0.1
    lr_scale: dict[str, float] = field(default_factory=dict)
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)

    def current_lr(self) -> float:
        if not self.decay_steps:
            return self.lr
        frac = min(self.step / self.decay_steps, 1.0)
        return self.lr * self.decay_to ** frac

    def scale_for(self, name: str) -> float:
        for prefix, s in self.lr_scale.items():
            if name.startswith(prefix):
                return s
        return 1.0


def adam_step(state: AdamState, params: ParameterStore) -> None:
    """One bias-corrected Adam update of every parameter in ``params``."""
    for name, g in params.grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteError(f"non-finite gradient for parameter {name!r}")
    lr = state.current_lr()
    state.step += 1
    t = state.step
    c1 = 1.0 - state.beta1 ** t
    c2 = 1.0 - state.beta2 ** t
    for name, p in params.values.items():
        g = params.grads[name]
        m = state.m.get(name)
        if m is None:
            m = state.m[name] = np.zeros_like(p)
            state.v[name] = np.zeros_like(p)
        v = state.v[name]
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        step = (lr * state.scale_for(name) / c1) * m / (np.sqrt(v / c2) + state.eps)
        p -= step.astype(p.dtype, copy=False)
        if not np.all(np.isfinite(p)):
            raise NonFiniteError(f"optimizer step produced non-finite values in {name!r}")
