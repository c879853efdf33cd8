"""Central-difference gradient oracle."""

from __future__ import annotations

from typing import Callable

import numpy as np

from .errors import OracleError
from .tensor import Tensor


def numerical_gradient(f: Callable[[], float], x: Tensor, h: float = 1e-4,
                       coords: np.ndarray | None = None) -> np.ndarray:
    """Central differences of ``f()`` w.r.t. the entries of ``x.data`` (perturbed in place).

    Only ``coords`` (flat indices) are evaluated when given; other entries stay 0.
    """
    flat = x.data.reshape(-1)
    grad = np.zeros(flat.size, dtype=np.float64)
    idx = np.arange(flat.size) if coords is None else np.asarray(coords)
    for i in idx:
        orig = flat[i]
        flat[i] = orig + h
        fp = float(f())
        flat[i] = orig - h
        fm = float(f())
        flat[i] = orig
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise OracleError(f"function is not finite near coordinate {int(i)}")
        grad[i] = (fp - fm) / (2 * h)
    return grad.reshape(x.shape)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-4,
               coords: np.ndarray | None = None, floor: float | None = None) -> float:
    """Max relative error between the analytic and central-difference gradient of f at x.

    ``f`` maps ``x`` (or closes over it) to a scalar ``Tensor``. The error per
    coordinate is ``|a - n| / max(|a|, |n|, floor)``. The default floor is
    ``max(1e-8, 1e-6 * |f(x)|)``: central differences carry round-off of about
    ``eps * |f| / h``, so for ``h >= 1e-6`` that noise stays below 2.2e-4 of the
    floor and cannot pose as a gradient error on coordinates whose true
    derivative is (near) zero. Pass ``coords`` to restrict the check to a subset
    of flat indices.
    """
    was = x.requires_grad
    x.requires_grad = True
    x.grad = None
    try:
        out = f(x)
        if not np.all(np.isfinite(out.data)):
            raise OracleError("function value is not finite")
        out.backward()
        if floor is None:
            floor = max(1e-8, 1e-6 * abs(out.item()))
        analytic = np.zeros(x.shape) if x.grad is None else np.asarray(x.grad, dtype=np.float64)
        x.grad = None
        numeric = numerical_gradient(lambda: f(x).item(), x, h, coords)
    finally:
        x.requires_grad = was
    if coords is not None:
        sel = np.asarray(coords)
        a, n = analytic.reshape(-1)[sel], numeric.reshape(-1)[sel]
    else:
        a, n = analytic.reshape(-1), numeric.reshape(-1)
    denom = np.maximum(np.maximum(np.abs(a), np.abs(n)), floor)
    return float(np.max(np.abs(a - n) / denom)) if a.size else 0.0
