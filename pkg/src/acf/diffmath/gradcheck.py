"""Central finite differences for checking recorded gradients."""
from __future__ import annotations

import numpy as np

from .tensor import grad, parameter


def numeric_grad(fn, arrays: dict[str, np.ndarray], step: float = 1e-3) -> dict[str, np.ndarray]:
    """Central-difference gradient of the scalar ``fn(**tensors)``, entry by entry."""
    out = {}
    for name, base in arrays.items():
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn(**{k: parameter(v) for k, v in arrays.items()}).data)
            flat[i] = orig - step
            down = float(fn(**{k: parameter(v) for k, v in arrays.items()}).data)
            flat[i] = orig
            gflat[i] = (up - down) / (2 * step)
        out[name] = g
    return out


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    scale = max(np.linalg.norm(a), np.linalg.norm(b), 1e-12)
    return float(np.linalg.norm(a - b) / scale)


def check_gradients(fn, arrays: dict[str, np.ndarray], step: float = 1e-3) -> dict[str, float]:
    """Relative error between backward and finite differences, per argument."""
    arrays = {k: np.array(v, copy=True) for k, v in arrays.items()}
    tensors = {k: parameter(v.copy()) for k, v in arrays.items()}
    analytic = grad(fn(**tensors), tensors)
    numeric = numeric_grad(fn, arrays, step)
    return {k: relative_error(analytic[k], numeric[k]) for k in arrays}
