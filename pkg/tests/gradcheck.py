"""Central finite-difference gradient checking shared by the test modules."""
from __future__ import annotations

import numpy as np

STEP = 1e-5
TOL = 1e-4


def numeric_grad(f, params: dict, name: str, step: float = STEP) -> np.ndarray:
    """Central differences of the scalar ``f(params)`` with respect to ``params[name]``."""
    p = params[name]
    g = np.zeros_like(p)
    it = np.nditer(p, flags=["multi_index"])
    for _ in it:
        idx = it.multi_index
        old = p[idx]
        p[idx] = old + step
        fp = f(params)
        p[idx] = old - step
        fm = f(params)
        p[idx] = old
        g[idx] = (fp - fm) / (2 * step)
    return g


def rel_error(analytic: np.ndarray, numeric: np.ndarray) -> float:
    """Norm-wise relative error, floored so that all-zero gradients compare as equal."""
    num = np.linalg.norm(analytic - numeric)
    den = max(np.linalg.norm(analytic), np.linalg.norm(numeric), 1e-7)
    return float(num / den)
