"""Central finite differences for checking hand-written gradients."""
from __future__ import annotations

import numpy as np


def finite_diff_gradient(loss_fn, params, eps: float = 1e-5):
    """Central-difference gradient of a scalar ``loss_fn``.

    ``params`` is an array (``loss_fn(array)``) or a dict of arrays
    (``loss_fn(dict)``); entries are perturbed in place and restored.
    """
    if not eps > 0:
        raise ValueError("eps must be positive")
    if isinstance(params, dict):
        return {k: _fd_array(lambda _: loss_fn(params), v, eps) for k, v in params.items()}
    arr = np.asarray(params, dtype=float).copy()
    return _fd_array(loss_fn, arr, eps)


def _fd_array(fn, arr, eps):
    g = np.zeros(arr.shape)
    flat = arr.reshape(-1)
    gflat = g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        up = fn(arr)
        flat[i] = orig - eps
        down = fn(arr)
        flat[i] = orig
        gflat[i] = (up - down) / (2 * eps)
    return g


def relative_error(analytic, numeric, floor: float = 1e-8) -> float:
    """``||a - n|| / max(||a||, ||n||, floor)`` over all entries (dicts are concatenated)."""
    if isinstance(analytic, dict):
        analytic = np.concatenate([np.ravel(analytic[k]) for k in sorted(analytic)])
        numeric = np.concatenate([np.ravel(numeric[k]) for k in sorted(numeric)])
    a = np.ravel(analytic)
    n = np.ravel(numeric)
    return float(np.linalg.norm(a - n) / max(np.linalg.norm(a), np.linalg.norm(n), floor))
