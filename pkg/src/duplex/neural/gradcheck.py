"""Central finite-difference check of the analytic gradients."""

from __future__ import annotations

from typing import Callable, Optional

import numpy as np

from .model import Batch, Mix, Model
from .train import sup_loss_and_grads


def numeric_grad(f: Callable[[], float], arr: np.ndarray, eps: float) -> np.ndarray:
    g = np.zeros_like(arr)
    flat, gflat = arr.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + eps
        up = f()
        flat[i] = old - eps
        down = f()
        flat[i] = old
        gflat[i] = (up - down) / (2.0 * eps)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    if denom < 1e-12:
        return 0.0
    return float(np.linalg.norm(a - b) / denom)


def grad_check(model: Model, batch: Batch, eps: float = 1e-4, mix: Optional[Mix] = None,
               names=None) -> dict:
    """Relative error between analytic and numeric ``dL_sup/dθ`` per array.

    The model is cast to float64 for the check; the input model is left
    untouched. The ``"max"`` key holds the worst array.
    """
    m = model.astype(np.float64)
    _, analytic = sup_loss_and_grads(m, batch, mix)

    def loss() -> float:
        return sup_loss_and_grads(m, batch, mix)[0]

    errors = {}
    for name in names or list(m.params):
        num = numeric_grad(loss, m.params[name], eps)
        errors[name] = relative_error(analytic[name], num)
    errors["max"] = max(errors.values())
    return errors
