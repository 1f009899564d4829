"""Central finite-difference checks for tape gradients."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .params import ParameterStore
from .tape import Tape, backward


@dataclass
class GradCheckResult:
    max_rel_error: float
    worst_param: str | None
    n_checked: int
    passed: bool


def numeric_gradient(fn, store: ParameterStore, name: str, h: float = 1e-5) -> np.ndarray:
    """d fn() / d store[name] by central differences; ``fn`` returns a scalar."""
    p = store.values[name]
    grad = np.zeros_like(p)
    flat, gflat = p.reshape(-1), grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = float(fn(None).value.sum())
        flat[i] = orig - h
        fm = float(fn(None).value.sum())
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad


def relative_errors(analytic, numeric, floor: float = 1e-8):
    a, n = np.asarray(analytic), np.asarray(numeric)
    return np.abs(a - n) / np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)


def check_gradients(fn, store: ParameterStore, names=None, h: float = 1e-5,
                    rtol: float = 1e-4, small_rtol: float = 1e-2, small: float = 1e-6) -> GradCheckResult:
    """Compare tape gradients of ``fn(tape)`` against central differences.

    ``fn`` takes a Tape (or None for an untracked evaluation) and returns a
    Tensor; the scalar being differentiated is the sum of its entries.
    Where the analytic gradient is below ``small`` in magnitude the
    tolerance relaxes to ``small_rtol``.
    """
    names = list(store.values) if names is None else list(names)
    store.zero_grads()
    tape = Tape()
    out = fn(tape)
    backward(tape, np.ones_like(out.value), out)
    worst, worst_name, passed, count = 0.0, None, True, 0
    for name in names:
        analytic = store.grads[name].copy()
        numeric = numeric_gradient(fn, store, name, h)
        rel = relative_errors(analytic, numeric)
        tol = np.where(np.abs(analytic) < small, small_rtol, rtol)
        count += rel.size
        if rel.size and rel.max() > worst:
            worst, worst_name = float(rel.max()), name
        passed &= bool(np.all(rel <= tol))
    store.zero_grads()
    return GradCheckResult(worst, worst_name, count, passed)
