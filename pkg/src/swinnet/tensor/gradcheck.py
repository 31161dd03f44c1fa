"""Central finite-difference verification of tape gradients."""

from __future__ import annotations

from typing import Callable, Optional, Sequence

import numpy as np

from .core import GradTape, InvalidArgument, NumericDomainError, Tensor


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-8) -> np.ndarray:
    a, n = np.abs(analytic), np.abs(numeric)
    return np.abs(analytic - numeric) / np.maximum(np.maximum(a, n), floor)


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, eps: float = 1e-6,
               indices: Optional[Sequence[tuple]] = None) -> float:
    """Max relative error between tape gradient and central differences.

    ``f`` maps ``x`` to a tensor; non-scalar outputs are reduced with a fixed
    random projection so every output element contributes. ``indices``
    restricts the check to a subset of elements of ``x``.
    """
    if x.dtype != np.float64:
        raise InvalidArgument("grad_check needs an f64 input")
    x0 = x.data.copy()
    probe = None

    def scalar(t: Tensor) -> Tensor:
        nonlocal probe
        from . import ops
        y = f(t)
        if y.size == 1:
            return y
        if probe is None:
            probe = np.random.default_rng(1234).standard_normal(y.shape)
        return ops.sum_all(ops.mul_const(y, probe))

    leaf = Tensor(x0.copy(), requires_grad=True)
    with GradTape() as tape:
        out = scalar(leaf)
    (analytic,) = tape.gradient(out, [leaf])
    if not np.all(np.isfinite(analytic)):
        raise NumericDomainError("non-finite analytic gradient")

    if indices is None:
        indices = list(np.ndindex(x0.shape))
    worst = 0.0
    for idx in indices:
        xp = x0.copy()
        xp[idx] += eps
        fp = scalar(Tensor(xp)).item()
        xp[idx] -= 2 * eps
        fm = scalar(Tensor(xp)).item()
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NumericDomainError(f"non-finite value while perturbing {idx}")
        cd = (fp - fm) / (2 * eps)
        worst = max(worst, float(relative_error(np.asarray(analytic[idx]), np.asarray(cd))))
    return worst

