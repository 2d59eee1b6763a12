"""Central finite-difference checks for the autodiff engine."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from .tensor import Tensor


def numeric_grad(fn: Callable[[], Tensor], param: Tensor, h: float = 1e-4,
                 indices: np.ndarray | None = None) -> np.ndarray:
    """Central differences of the scalar ``fn()`` w.r.t. entries of ``param``.

    With ``indices`` (flat positions) only those entries are perturbed; the
    rest of the result stays zero.
    """
    flat = param.data.reshape(-1)
    out = np.zeros(flat.size)
    for i in (range(flat.size) if indices is None else indices):
        orig = flat[i]
        flat[i] = orig + h
        up = float(fn().data.sum())
        flat[i] = orig - h
        down = float(fn().data.sum())
        flat[i] = orig
        out[i] = (up - down) / (2 * h)
    return out.reshape(param.shape)


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> float:
    """Norm-wise ``||a - n|| / max(||a||, ||n||, floor)``.

    The floor keeps gradients that are exactly zero (a bias feeding straight
    into a normalisation, say) from comparing finite-difference roundoff
    against itself.
    """
    scale = max(np.linalg.norm(analytic), np.linalg.norm(numeric), floor)
    return float(np.linalg.norm(analytic - numeric) / scale)


def check_gradients(fn: Callable[[], Tensor], params: Sequence[Tensor],
                    h: float = 1e-4, max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> list[float]:
    """Return the relative error between backprop and finite differences per param.

    ``max_entries`` caps the number of randomly chosen coordinates probed per
    parameter, which keeps checks on whole networks affordable.
    """
    rng = rng if rng is not None else np.random.default_rng(0)
    for p in params:
        p.grad = None
    loss = fn()
    loss.backward()
    errors = []
    for p in params:
        analytic = p.grad if p.grad is not None else np.zeros_like(p.data)
        analytic = analytic.copy().reshape(-1)
        idx = None
        if max_entries is not None and p.size > max_entries:
            idx = np.sort(rng.choice(p.size, max_entries, replace=False))
        numeric = numeric_grad(fn, p, h, idx).reshape(-1)
        if idx is not None:
            analytic, numeric = analytic[idx], numeric[idx]
        errors.append(relative_error(analytic, numeric))
    return errors
